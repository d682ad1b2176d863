from mmdfr.data.augment import FLIP_ONLY, AugmentConfig, augment, downsample
from mmdfr.data.manifest import (DistributionReport, ManifestRecord, distribution_report,
                                 load_manifest, read_distribution, resolve_path,
                                 write_distribution, write_manifest)
from mmdfr.data.store import FeatureStore, feature_store_read, feature_store_write
from mmdfr.data.synth import SynthConfig, synth_generate, synth_pairs, write_dataset
