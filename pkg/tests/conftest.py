import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from painsig.dataio import Gender, PainLabel, SubjectMeta, save_dataset, synth_ecg  # noqa: E402


@pytest.fixture
def three_segment_manifest(tmp_path):
    segs = []
    for i, (bpm, label) in enumerate([(60, PainLabel.NP), (75, PainLabel.P2), (100, PainLabel.P4)]):
        subj = SubjectMeta(f"S{i}", Gender.Female if i % 2 else Gender.Male, 25 + 10 * i)
        seg, _ = synth_ecg(bpm, 5.5, 512, 0.01, i, label=label, subject=subj, segment_id=f"seg{i}")
        segs.append(seg)
    return save_dataset(segs, tmp_path / "data", fmt="f32le")
