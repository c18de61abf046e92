import pytest

from app.core.config import NoiseModel
from app.core.exceptions import ConfigError, InputValidationError
from app.models import Mode
from app.services.evaluator import TrackingEvaluator
from app.services.experiment import (
    BASELINE, FULL, SUITES, VARIANTS, build_suite, get_variant, measure_throughput,
    run_ablation, run_sequence, scripted_occlusions
)

CLEAN = NoiseModel(p_miss=0.0, p_miss_local=0.0, loc_noise_std=0.0, size_noise_std=0.0, fp_rate=0.0)


def test_variant_lookup():
    assert get_variant("ByteTrack") is BASELINE
    assert get_variant("+JCMA+PMR+GD/LD") is FULL
    assert [v.name for v in VARIANTS][2:4] == ["+JCMA", "+JCMA+PMR"]
    with pytest.raises(ConfigError):
        get_variant("DeepSORT")


def test_full_pipeline_on_clean_target(cfg, linear_target):
    gt, stream = linear_target(200, velocity=(3.0, 1.0))
    run = run_sequence(stream, cfg, variant=FULL, gt=gt, noise=CLEAN, seed=0)
    assert run.steps == 200
    assert run.modes[:30] == [Mode.GD] * 30
    assert run.modes[30:150] == [Mode.LD] * 120
    assert run.modes[150] is Mode.GD
    assert run.results.ids() == [1]
    report = TrackingEvaluator().evaluate(gt, run.results)
    assert report.idsw == 0
    assert report.mota == pytest.approx(1.0)


def test_global_only_variants_never_use_windows(cfg, linear_target):
    gt, stream = linear_target(80)
    run = run_sequence(stream, cfg, variant=get_variant("+JCMA+PMR"), gt=gt)
    assert set(run.modes) == {Mode.GD}
    assert run.results.count() == 80


def test_local_detection_needs_ground_truth(cfg, linear_target):
    _, stream = linear_target(10)
    with pytest.raises(InputValidationError):
        run_sequence(stream, cfg, variant=FULL)


def test_scripted_occlusions_are_staggered():
    windows = scripted_occlusions(3, 600, seed=1)
    assert windows == scripted_occlusions(3, 600, seed=1)
    assert [w.start for w in windows if w.start < 150] == [60, 100, 140]
    assert all(10 <= w.duration <= 25 for w in windows)


def test_build_suite():
    occlusion = build_suite("occlusion", 3, frames=300, n_targets=2)
    assert [c.seed for c in occlusion] == [0, 1, 2]
    assert all(c.noise.occlusions for c in occlusion)
    assert occlusion[1].scenario.frames == 300 and occlusion[1].scenario.n_targets == 2

    crossing = build_suite("crossing", 1, frames=300, n_targets=3)
    assert crossing[0].scenario.crossing
    assert crossing[0].noise.occlusions == ()

    assert SUITES == ("occlusion", "crossing", "mixed")
    with pytest.raises(ConfigError):
        build_suite("night", 1, frames=10, n_targets=1)


def test_small_ablation_table():
    result = run_ablation("mixed", 1, frames=60, n_targets=1, variants=[BASELINE, get_variant("+JCMA")],
                          workers=1, include_hota=False)
    assert list(result.reports) == ["ByteTrack", "+JCMA"]
    table = result.format_table().splitlines()
    assert table[0].split()[:2] == ["Variant", "IDSW"]
    assert table[2].startswith("ByteTrack")
    assert table[3].startswith("+JCMA")


@pytest.mark.slow
def test_parallel_ablation_matches_serial():
    kwargs = dict(frames=150, n_targets=2, variants=[BASELINE, FULL], include_hota=False)
    serial = run_ablation("occlusion", 3, workers=1, **kwargs)
    parallel = run_ablation("occlusion", 3, workers=2, **kwargs)
    for name in serial.reports:
        assert serial.reports[name] == parallel.reports[name]


@pytest.mark.slow
@pytest.mark.parametrize("suite", ["occlusion", "crossing"])
def test_full_tracker_halves_identity_switches(suite):
    result = run_ablation(suite, 20, frames=600, n_targets=3, variants=[BASELINE, FULL], include_hota=False)
    baseline, full = result.reports["ByteTrack"], result.reports["+JCMA+PMR+GD/LD"]
    assert baseline.idsw > 0
    assert full.idsw <= 0.5 * baseline.idsw
    assert full.idf1 >= baseline.idf1 + 0.05


def test_throughput_sanity():
    result = measure_throughput(steps=100)
    assert result.steps == 100
    assert result.steps_per_second > 100


@pytest.mark.slow
def test_throughput_budget():
    assert measure_throughput(steps=1000).steps_per_second >= 1000
