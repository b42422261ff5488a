from typing import Dict, Optional

import torch
from torchmetrics import Metric


class VoxelIoU(Metric):
    """Intersection over union of thresholded occupancy predictions, plus the false-occupied rate."""

    def __init__(self, threshold: float = 0.5, dist_sync_on_step=False):
        super().__init__(dist_sync_on_step=dist_sync_on_step)

        self.add_state("intersection", default=torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")
        self.add_state("union", default=torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")
        self.add_state("false_occupied", default=torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")
        self.add_state("free", default=torch.tensor(0, dtype=torch.long), dist_reduce_fx="sum")

        self._threshold = threshold

    def update(
        self, probabilities: torch.Tensor, labels: torch.Tensor, mask: Optional[torch.BoolTensor] = None
    ) -> None:
        """
        :param probabilities: predicted occupancy in [0, 1]
        :param labels: binary ground truth of the same shape
        :param mask: voxels to score, all when omitted
        """
        assert probabilities.size() == labels.size()
        predicted = probabilities >= self._threshold
        truth = labels >= 0.5
        if mask is not None:
            predicted, truth = predicted[mask], truth[mask]

        self.intersection += (predicted & truth).sum()
        self.union += (predicted | truth).sum()
        self.false_occupied += (predicted & ~truth).sum()
        self.free += (~truth).sum()

    def compute(self) -> Dict[str, torch.Tensor]:
        # Both empty counts as a perfect match
        iou = self.intersection / self.union if self.union > 0 else torch.tensor(1.0)
        false_rate = self.false_occupied / self.free if self.free > 0 else torch.tensor(0.0)
        return {"iou": iou.float(), "false_occupied": false_rate.float()}
