import io
import json

import pytest

from conftest import TOY_SKETCHES
from strokeset import geometry as G
from strokeset.cli import main
from strokeset.config import ENV_VAR, ConfigError, RunConfig

TINY = """\
# tiny run for CLI tests
n_points = 16
d_h = 8
enc_layers = 1
enc_heads = 2
d_f = 4
d_img = 6
channels = 2,2,2,2,2,3
enc_steps = 3
enc_lr = 1e-3
d_model = 8
diff_layers = 1
diff_heads = 2
d_time = 8
split_hidden = 6
T = 10
diff_steps = 3
metric_k = 5
"""


def run(*argv):
    buf = io.StringIO()
    code = main([str(a) for a in argv], out=buf)
    return code, buf.getvalue()


def sections(text):
    out, name = {}, None
    for line in text.splitlines():
        if line.startswith("== ") and line.endswith(" =="):
            name = line[3:-3]
            out[name] = []
        elif name is not None and line:
            out[name].append(line)
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.cfg"
    cfg.write_text(TINY)
    c = ["--config", cfg]
    steps = [
        ("ingest", TOY_SKETCHES, "--out", d / "sk.ndjson", "--manifest", d / "man.csv", *c),
        ("preprocess", d / "sk.ndjson", "--out", d / "table.bin", *c),
        ("train-encoder", d / "table.bin", "--out", d / "enc.bin", "--log", d / "loss.csv",
         "--figure", d / "loss.png", *c),
        ("encode-dataset", d / "enc.bin", d / "table.bin", "--out", d / "lat.bin", "--sketches", d / "sk.ndjson", *c),
        ("train-diffusion", d / "lat.bin", "--out", d / "diff.bin", *c),
        ("generate", d / "enc.bin", d / "diff.bin", "--out-dir", d / "gen", "--n", 6, "--seed", 3,
         "--trajectory", "10,5,1", "--figure", d / "traj.png", *c),
        ("evaluate", d / "sk.ndjson", d / "gen", "--out", d / "report.txt", *c),
    ]
    outputs = {}
    for argv in steps:
        code, text = run(*argv)
        assert code == 0, (argv[0], text)
        outputs[argv[0]] = text
    return d, cfg, outputs


def test_pipeline_artifacts(pipeline):
    d, _, outputs = pipeline
    assert (d / "man.csv").read_text().startswith("# strokeset-manifest v1\n")
    assert (d / "loss.csv").read_text().splitlines()[1] == "step,total,vec,img,kl,ce"
    assert (d / "loss.png").stat().st_size > 0 and (d / "traj.png").stat().st_size > 0
    svgs = sorted(p.name for p in (d / "gen").glob("*.svg"))
    assert svgs == [f"sample_{s:06d}.svg" for s in range(3, 9)]
    assert len(list((d / "gen" / "trajectory").glob("*.svg"))) == 3
    report = (d / "report.txt").read_text().splitlines()
    assert report[0] == "# strokeset-metrics v1"
    rep = json.loads(report[1])
    assert rep["n_real"] == 64 and rep["n_gen"] == 6 and rep["fid"] >= 0
    sec = sections(outputs["evaluate"])
    assert sec["evaluate"][0].startswith("fid,precision,recall")
    assert sections(outputs["ingest"])["ingest"][1].split(",")[3] == "64"


def test_generate_byte_identical(pipeline, tmp_path):
    d, cfg, _ = pipeline
    for name in ("a", "b"):
        code, _ = run("generate", d / "enc.bin", d / "diff.bin", "--out-dir", tmp_path / name, "--seed", 7,
                      "--config", cfg)
        assert code == 0
    assert (tmp_path / "a" / "sample_000007.svg").read_bytes() == (tmp_path / "b" / "sample_000007.svg").read_bytes()


def test_reconstruct(pipeline, tmp_path):
    d, cfg, _ = pipeline
    code, text = run("reconstruct", d / "enc.bin", d / "sk.ndjson", "--id", "toy000", "--out", tmp_path / "r.svg",
                     "--config", cfg)
    assert code == 0, text
    assert (tmp_path / "r.svg").read_text().count("<path") >= 1
    code, _ = run("reconstruct", d / "enc.bin", d / "sk.ndjson", "--id", "nope", "--out", tmp_path / "r.svg")
    assert code == 3


def test_render_udf_pgm(tmp_path):
    code, text = run("render-udf", TOY_SKETCHES, "--out", tmp_path / "u.pgm")
    assert code == 0, text
    codes, maxval = G.read_pgm((tmp_path / "u.pgm").read_bytes())
    assert maxval == 255 and codes.max() == 255
    code, text = run("render-udf", TOY_SKETCHES, "--gamma", "10,200", "--bits", "16", "--out", tmp_path / "s.pgm",
                     "--figure", tmp_path / "sweep.png")
    assert code == 0
    assert (tmp_path / "s_gamma10.pgm").exists() and (tmp_path / "s_gamma200.pgm").exists()
    assert (tmp_path / "sweep.png").exists()


def test_usage_errors():
    assert run()[0] == 2
    assert run("bogus")[0] == 2
    assert run("ingest", TOY_SKETCHES)[0] == 2            # missing --out
    assert run("evaluate", TOY_SKETCHES, TOY_SKETCHES, "--set", "nokey=1")[0] == 2
    assert run("evaluate", TOY_SKETCHES, TOY_SKETCHES, "--set", "metric_k=abc")[0] == 2


def test_missing_and_bad_data(tmp_path):
    assert run("generate", tmp_path / "no.bin", tmp_path / "no2.bin", "--out-dir", tmp_path)[0] == 3
    assert run("train-encoder", tmp_path / "no.bin", "--out", tmp_path / "e.bin")[0] == 3
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a container")
    assert run("train-diffusion", bad, "--out", tmp_path / "d.bin")[0] == 3
    assert run("render-udf", TOY_SKETCHES, "--gamma", "0", "--out", tmp_path / "x.pgm")[0] == 3


def test_wrong_artifact_kind(pipeline, tmp_path):
    d, _, _ = pipeline
    assert run("train-diffusion", d / "table.bin", "--out", tmp_path / "d.bin")[0] == 3


def test_config_file_and_env(tmp_path, monkeypatch):
    path = tmp_path / "c.cfg"
    path.write_text("metric_k = 7\n# comment\nrdp_epsilon=0.02\n")
    monkeypatch.setenv(ENV_VAR, str(path))
    cfg = RunConfig.load(None)
    assert cfg["metric_k"] == 7 and cfg["rdp_epsilon"] == 0.02
    cfg.update({"metric_k": 3, "seed": None})
    assert cfg["metric_k"] == 3 and cfg["seed"] == 0
    assert RunConfig.parse(cfg.dumps())["metric_k"] == 3
    with pytest.raises(ConfigError):
        RunConfig.parse("unknown_key = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.parse("no equals sign\n")


def test_env_config_reaches_cli(tmp_path, monkeypatch):
    path = tmp_path / "c.cfg"
    path.write_text("metric_k = 100\n")
    monkeypatch.setenv(ENV_VAR, str(path))
    # 64 real sketches <= k=100: data error; a flag restores a valid k
    assert run("evaluate", TOY_SKETCHES, TOY_SKETCHES)[0] == 3
    code, text = run("evaluate", TOY_SKETCHES, TOY_SKETCHES, "--k", "5")
    assert code == 0, text
    # the same sketch set against itself has FID zero
    assert float(sections(text)["evaluate"][1].split(",")[0]) < 1e-8


def test_ablate_small(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY)
    code, text = run("ablate", TOY_SKETCHES, "--limit", 8, "--steps", 2, "--config", cfg,
                     "--figure", tmp_path / "ab.png")
    assert code == 0, text
    rows = sections(text)["ablate"]
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "no-stroke-norm", "gamma-0"]
    assert (tmp_path / "ab.png").exists()
