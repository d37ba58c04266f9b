import json

import trend_protocol as tp


def test_protocol_runs_end_to_end_on_cifar_format(fake_cifar, tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_ACCEPT_CACHE", str(tmp_path))
    p = tp.Protocol("cifar10", data_dir=str(fake_cifar), train_n=64, test_n=50, epochs=1, rounds=2,
                    finetune_epochs=1, saf_models=["none", "tanh"])
    run = tp.Runner(p, log=lambda s: None)
    for check in (tp.check_robustness, tp.check_clean_parity, tp.check_sweep_shape,
                  tp.check_q25_ordering, tp.check_finetune):
        ok, detail = check(run)
        assert isinstance(ok, bool) and detail
    reports = sorted(f.name for f in run.dir.glob("report-*.json"))
    assert "report-none-q25-1e-05.json" in reports and "report-finetuned-tanh-fp32-0.0.json" in reports
    assert json.loads((run.dir / "report-none-fp32-1e-05.json").read_text())["rounds"] == 2
    # second runner reuses cached checkpoints and reports
    again = tp.Runner(p, log=lambda s: (_ for _ in ()).throw(AssertionError("retrained")))
    assert again.report("none", "fp32", [1e-5]) == run.report("none", "fp32", [1e-5])
