import json

from selftrain_lab.cli import main


def test_rho_prints_csv(capsys):
    assert main(["rho", "--grid", "0.5,1.0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "delta,H0,H1,H2,J0,J2,rho" and len(out) == 3


def test_gen_train_init(tmp_path, capsys):
    d = tmp_path / "data"
    assert main(["gen", "--d", "6", "--K", "2", "--N", "900", "--M", "50", "--out", str(d)]) == 0
    assert (d / "labeled.csv").exists() and (d / "labeled.csv.json").exists() and (d / "wstar.csv").exists()
    assert main(["init", "--labeled", str(d / "labeled.csv"), "--K", "2", "--out", str(tmp_path / "w0.csv")]) == 0
    diag = json.loads(capsys.readouterr().out)
    assert diag["n_used"] == 900
    assert main(["train", "--labeled", str(d / "labeled.csv"), "--unlabeled", str(d / "unlabeled.csv"),
                 "--init", str(tmp_path / "w0.csv"), "--wstar", str(d / "wstar.csv"),
                 "--L-max", "50", "--out", str(tmp_path / "t")]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["outer_iters"] <= 50 and (tmp_path / "t" / "trace.csv").exists()


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"experiment": "ErrorVsM", "bogus": 1}')
    assert main(["exp", "ErrorVsM", "--config", str(bad)]) == 2
    d = tmp_path / "data"
    main(["gen", "--d", "4", "--K", "2", "--N", "40", "--out", str(d)])
    assert main(["train", "--labeled", str(d / "labeled.csv"), "--init", str(d / "wstar.csv"),
                 "--eta", "1e300", "--L-max", "3", "--out", str(tmp_path / "t")]) in (0, 3)
    w = tmp_path / "w.csv"
    w.write_text("4,2,relu\n9,9\n9,9\n9,9\n9,9\n")
    assert main(["train", "--labeled", str(d / "labeled.csv"), "--init", str(w),
                 "--eta", "1e200", "--L-max", "3", "--out", str(tmp_path / "t")]) == 3


def test_exp_small(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "ErrorVsM", "d": 5, "K": 2, "N_grid": [50], "M_grid": [0, 20],
                               "trials": 2, "train": {"L_max": 20}}))
    assert main(["exp", "ErrorVsM", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    assert (tmp_path / "o" / "aggregate.csv").exists()
    assert main(["exp", "RateVsM", "--config", str(cfg)]) == 2
