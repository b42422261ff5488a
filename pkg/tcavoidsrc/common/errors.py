class TcavoidError(Exception):
    pass


class ConfigError(TcavoidError):
    """Unknown method / perception ids, missing trained artifacts or malformed config sections."""


class ScenarioError(TcavoidError):
    """Scenario sampling gave up after the configured number of rejection tries."""


class ContractError(TcavoidError):
    """Environment or controller used outside of its call protocol (e.g. step after done)."""


class TrainingError(TcavoidError):
    pass
