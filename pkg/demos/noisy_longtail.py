"""
Making a long-tailed, noisy training set
========================================

Start from a balanced Gaussian benchmark, cut it down to an exponential
profile and flip labels with class-frequency-proportional noise.
"""

import numpy as np

from calibre.core import CorruptionSpec, seeded_rng
from calibre.pipeline import synthetic_benchmark
from calibre.simulate import build_transition, inject_noise, longtail_counts, subsample_longtail

train, test, _ = synthetic_benchmark(seed=0, dim=8, num_classes=6, base_count=500)
print("balanced counts:", train.class_counts().tolist())

spec = CorruptionSpec(imbalance_ratio=10, noise_rate=0.3, num_classes=6, base_count=500)
target = longtail_counts(spec)
print("target profile: ", target)

lt = subsample_longtail(train, target, seeded_rng(0, "subsample"))
print("long-tailed:    ", lt.class_counts().tolist())

# off-diagonal mass goes to frequent classes, so tail samples mostly get
# relabelled as heads
T = build_transition(lt.class_counts(), spec.noise_rate)
np.set_printoptions(precision=3, suppress=True)
print(T.entries)

noisy, clean = inject_noise(lt, T, seeded_rng(0, "noise"))
print("flipped fraction:", np.mean(noisy.labels != clean))
