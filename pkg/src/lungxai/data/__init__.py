from .augment import augment, augment_dataset, hflip
from .io import load_dataset, load_mask, load_slice, save_gray
from .manifest import DatasetManifest, IngestionError, SliceRecord
from .phantom import PhantomConfig, gen_phantom
from .split import SplitError, patient_folds, patient_level_split, split_patients

__all__ = [
    "DatasetManifest", "IngestionError", "PhantomConfig", "SliceRecord", "SplitError", "augment",
    "augment_dataset", "gen_phantom", "hflip", "load_dataset", "load_mask", "load_slice",
    "patient_folds", "patient_level_split", "save_gray", "split_patients",
]
