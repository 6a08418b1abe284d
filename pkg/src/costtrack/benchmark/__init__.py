"""Small-object tracking benchmark: dataset format, statistics, synthetic data, metrics."""
from .attributes import ATTRIBUTE_NAMES, AttributeSet
from .dataset import (DatasetError, SequenceAnnotation, average_relative_speed, is_small_object, load_dataset,
                      load_frames, load_sequence, relative_speed, validate_dataset, write_sequence)
from .metrics import MetricReport, aggregate, attribute_report, compute_metrics
from .synth import SynthConfig, generate_sequence, generate_synthetic
