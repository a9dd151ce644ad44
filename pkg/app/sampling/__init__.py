from .degrade import KINDS, DegradationSpec, degrade, jpeg_roundtrip
from .sampler import (Histogram, bin_index, bin_scores, filter_identities, flatness_ratio,
                      random_sample, smooth_sample, summarize_histogram)
from .synth import identity_pattern, synthesize_dataset
