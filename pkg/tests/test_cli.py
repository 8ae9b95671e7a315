import csv
import math
import statistics

import pytest

from arisac.cli import COLUMNS, MEDIAN_COLUMNS, OK_STATUS, main

CONFIG = """
[scenario]
n_antennas = 4
m_elements = 4
k_users = 1
[solver]
max_outer = 2
"""


def _config(tmp_path, sweep=""):
    p = tmp_path / "c.ini"
    p.write_text(CONFIG + sweep)
    return str(p)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_single_value_sweep_has_one_row(tmp_path):
    cfg = _config(tmp_path, "[sweep]\nparam = p_bs\nvalues = 23\nseeds = 0\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = _rows(out / "sweep_p_bs.csv")
    assert tuple(rows[0]) == COLUMNS
    assert len(rows) == 2
    rec = dict(zip(rows[0], rows[1]))
    assert rec["variant"] == "aris-isac" and float(rec["value"]) == pytest.approx(23.0)
    assert rec["status"] in OK_STATUS
    assert (out / "sweep_p_bs_runs.jsonl").read_text().count("\n") == int(rec["outer_iters"])


def _strip_wall(rows):
    idx = rows[0].index("wall_ms")
    return [r[:idx] + r[idx + 1:] for r in rows]


def test_sweep_is_deterministic_and_parallel_safe(tmp_path):
    cfg = _config(tmp_path, "[sweep]\nparam = gamma\nvalues = 0, 10\nseeds = 0, 1\n"
                            "variants = aris-isac, pris-isac\n")
    outs = []
    for i, jobs in enumerate(("1", "1", "2")):
        out = tmp_path / f"o{i}"
        assert main(["sweep", "--config", cfg, "--out", str(out), "--jobs", jobs]) == 0
        outs.append(out)
    first = _strip_wall(_rows(outs[0] / "sweep_gamma.csv"))
    assert len(first) == 1 + 2 * 2 * 2
    for out in outs[1:]:
        assert _strip_wall(_rows(out / "sweep_gamma.csv")) == first
        assert _rows(out / "sweep_gamma_median.csv") == _rows(outs[0] / "sweep_gamma_median.csv")


def test_median_file_is_reproducible_independently(tmp_path):
    cfg = _config(tmp_path, "[sweep]\nparam = p_bs\nvalues = 20, 26\nseeds = 0-2\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    raw = _rows(out / "sweep_p_bs.csv")
    header, data = raw[0], [dict(zip(raw[0], r)) for r in raw[1:]]
    med = _rows(out / "sweep_p_bs_median.csv")
    assert tuple(med[0]) == MEDIAN_COLUMNS
    for line in med[1:]:
        m = dict(zip(med[0], line))
        grp = [r for r in data if (r["variant"], r["value"]) == (m["variant"], m["value"])
               and r["status"] in OK_STATUS]
        assert int(m["n_runs"]) == len(grp)
        for col in ("crb_rad2", "crb_db", "bs_power_w", "ris_power_w", "outer_iters"):
            assert float(m[col]) == statistics.median(float(r[col]) for r in grp)


def test_run_verb(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--seeds", "3",
                 "--variant", "aris-isac,aris-radar-only"]) == 0
    rows = _rows(out / "run.csv")
    assert len(rows) == 3
    assert [r[0] for r in rows[1:]] == ["aris-isac", "aris-radar-only"]
    assert all(r[2] == "" and r[3] == "3" for r in rows[1:])


def test_run_failure_is_recorded_not_raised(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(CONFIG.replace("k_users = 1", "k_users = 1\np_ris = -200 dBm"))
    out = tmp_path / "out"
    assert main(["run", "--config", str(p), "--out", str(out)]) == 0
    rec = dict(zip(*_rows(out / "run.csv")))
    assert rec["status"].startswith("error: ConfigurationError")
    assert math.isinf(float(rec["crb_rad2"]))


def test_validate_exit_codes(tmp_path, capsys):
    good = _config(tmp_path)
    assert main(["validate", "--config", good]) == 0
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\na_max = 0.5\nn_antennas = x\n")
    assert main(["validate", "--config", str(bad)]) == 1
    text = capsys.readouterr().out
    assert "a_max >= 1" in text and "n_antennas" in text


def test_validate_warns_on_static_draw(tmp_path, capsys):
    p = tmp_path / "w.ini"
    p.write_text("[scenario]\np_ris = -60 dBm\n")
    assert main(["validate", "--config", str(p)]) == 0
    assert "warning" in capsys.readouterr().out


def test_bad_variant_is_an_error(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", "--config", cfg, "--out", str(tmp_path), "--variant", "nope"]) == 2
    assert "unknown variant" in capsys.readouterr().err


def test_selftest_verb(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7 and all(x.startswith("PASS") for x in lines)
