"""In-memory dataset of labelled videos, the unit the trainer and the
evaluator consume. Matches the on-disk feature-file layout plus the
implicit sample-id convention (record i is "s{i:06d}")."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


def implicit_sample_id(index):
    return f"s{index:06d}"


@dataclass
class VideoDataset:
    videos: np.ndarray          # (N, T, H, W, C)
    verb_indices: np.ndarray    # (N,)
    object_indices: np.ndarray  # (N,)
    sample_ids: tuple = ()

    def __post_init__(self):
        n = self.videos.shape[0]
        if self.verb_indices.shape != (n,) or self.object_indices.shape != (n,):
            raise InvalidInput("label arrays do not match the number of videos")
        if not self.sample_ids:
            self.sample_ids = tuple(implicit_sample_id(i) for i in range(n))
        elif len(self.sample_ids) != n:
            raise InvalidInput("sample_ids do not match the number of videos")
        self._row_of = {sid: i for i, sid in enumerate(self.sample_ids)}

    def __len__(self):
        return self.videos.shape[0]

    def rows_for(self, sample_ids):
        try:
            return np.array([self._row_of[sid] for sid in sample_ids], dtype=np.intp)
        except KeyError as err:
            raise InvalidInput(f"sample {err} not present in the dataset")

    def composition_indices(self, space):
        return np.array(
            [space.composition_index(int(v), int(o))
             for v, o in zip(self.verb_indices, self.object_indices)],
            dtype=np.intp)
