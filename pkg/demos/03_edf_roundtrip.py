"""
EDF+ files: writing, reading, and trial extraction
==================================================

A small three-channel recording with T0/T1/T2 annotations is serialized
to EDF+, parsed back, and cut into labelled trials.
"""
import numpy as np

from neurocam.edf import Annotation, Recording, extract_trials, parse_edf, serialize_edf

fs = 160.0
rng = np.random.default_rng(1)
samples = rng.normal(0, 40, (3, int(12 * fs)))  # microvolts
notes = [
    Annotation(0.0, 4.0, "T0"),
    Annotation(4.0, 4.0, "T1"),
    Annotation(8.0, 4.0, "T2"),
]
rec = Recording(subject_id=7, run_id=4, sampling_rate=fs, channel_labels=["C3", "Cz", "C4"], samples=samples, annotations=notes)

blob = serialize_edf(rec)
print(f"{len(blob)} bytes, header says {blob[236:244].decode().strip()} data records")

back = parse_edf(blob, subject_id=7, run_id=4)
h = back.header.signals[0]
step = (h.physical_max - h.physical_min) / (h.digital_max - h.digital_min)
err = np.max(np.abs(back.samples[:3] - samples))
print(f"max round-trip error {err:.4f} uV vs quantization step {step:.4f} uV")

# T1 is the left fist, T2 the right fist; T0 rest is skipped
for tr in extract_trials(back):
    print(f"  trial {tr.index} at {tr.onset_sample / fs:4.1f}s  {tr.class_label:5s}  {tr.length_samples / fs:.1f}s")
