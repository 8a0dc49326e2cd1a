"""Config resolution layers and end-to-end CLI runs (library parity)."""

import json

import numpy as np
import pytest

import ensparse.cli as cli
from ensparse.cli import main, read_csv, write_csv
from ensparse.clustering import (
    build_l1_graph,
    center_normalize,
    spectral_cluster,
)
from ensparse.config import load_config_file, persist_resolved, resolve
from ensparse.dictionaries import TrainingSet
from ensparse.ensemble import apply_ensemble_batch, train_randexav
from ensparse.errors import ConfigError, ConvergenceError, DataError
from ensparse.images import bicubic_resize, read_image, write_pgm
from ensparse.operators import BlurDownsample
from ensparse.restoration import compressive_recover, psnr
from ensparse.serialization import load_model, save_model
from ensparse.sisr import superresolve
from ensparse.sparse_coding import code_batch
from ensparse.synthetic import patch_corpus, texture_image, union_of_subspaces


# ---------------------------------------------------------------------------
# resolve() layering


def test_resolve_defaults():
    cfg = resolve("train", {}, {}, environ={})
    assert cfg["method"] == "randexav"
    assert cfg["seed"] == 0 and cfg["workers"] == 1
    assert cfg["out"] == "ensparse-out"
    assert cfg["model"] is None  # optional, unset


def test_resolve_precedence():
    cfg = resolve("train", {"seed": 1, "k": 32}, {"seed": 9},
                  environ={"ENSPARSE_SEED": "7", "ENSPARSE_K": "64"})
    assert cfg["seed"] == 9   # flags beat environment
    assert cfg["k"] == 64     # environment beats file


def test_resolve_env_lists_and_bools():
    base = {"model": "m.model", "images": ["a.pgm"]}
    cfg = resolve("recover", base, {}, environ={"ENSPARSE_N_LIST": "8,16"})
    assert cfg["n_list"] == [8, 16]
    cfg = resolve("recover", base, {}, environ={"ENSPARSE_N_LIST": "[8, 24]"})
    assert cfg["n_list"] == [8, 24]
    cfg = resolve("recover", base, {}, environ={"ENSPARSE_SAVE_IMAGES": "true"})
    assert cfg["save_images"] is True
    with pytest.raises(ConfigError):
        resolve("recover", base, {}, environ={"ENSPARSE_SAVE_IMAGES": "yep"})
    # unrelated ENSPARSE_* keys are ignored
    cfg = resolve("recover", base, {}, environ={"ENSPARSE_NOT_A_KEY": "1"})
    assert cfg["model"] == "m.model"


def test_resolve_rejects_bad_values():
    with pytest.raises(ConfigError):
        resolve("train", {"seed": "x"}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {"seed": 1.5}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {"seed": True}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {"workers": 0}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {"method": "nope"}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {"what_is_this": 1}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("train", {}, {"what_is_this": 1}, environ={})
    with pytest.raises(ConfigError):
        resolve("recover", {"model": "m", "images": 3}, {}, environ={})
    with pytest.raises(ConfigError):
        resolve("nope", {}, {}, environ={})


def test_resolve_requires_missing_keys():
    with pytest.raises(ConfigError, match="model"):
        resolve("recover", {"images": ["a.pgm"]}, {}, environ={})


def test_load_config_file_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(path)
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.json")


def test_persist_resolved_deterministic(tmp_path):
    cfg = resolve("oracle-demo", {"n_patches": 10}, {}, environ={})
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    persist_resolved(cfg, "oracle-demo", p1)
    persist_resolved(cfg, "oracle-demo", p2)
    assert p1.read_bytes() == p2.read_bytes()
    payload = json.loads(p1.read_text())
    assert payload["command"] == "oracle-demo"
    assert payload["schema_version"] == 1
    assert payload["config"]["n_patches"] == 10


# ---------------------------------------------------------------------------
# versioned CSV helpers


def test_write_csv_roundtrip(tmp_path):
    path = tmp_path / "t.csv"
    rows = [("a", 1, 0.25, True), ("b", 2, 1.0 / 3.0, False)]
    write_csv(path, "demo", ("name", "n", "x", "flag"), rows)
    name, version, header, parsed = read_csv(path)
    assert (name, version) == ("demo", 1)
    assert header == ["name", "n", "x", "flag"]
    assert parsed[0] == ["a", "1", repr(0.25), "true"]
    assert float(parsed[1][2]) == 1.0 / 3.0  # repr() round-trips exactly


def test_read_csv_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("name,n\na,1\n")  # no schema line
    with pytest.raises(DataError):
        read_csv(path)
    path.write_text("# ensparse-csv demo vx\nname\n")
    with pytest.raises(DataError):
        read_csv(path)
    path.write_text("# ensparse-csv demo v1\nname,n\na\n")  # short row
    with pytest.raises(DataError):
        read_csv(path)
    path.write_text("# ensparse-csv demo v1\n")  # no header
    with pytest.raises(DataError):
        read_csv(path)
    with pytest.raises(DataError):
        read_csv(tmp_path / "missing.csv")


# ---------------------------------------------------------------------------
# CLI end-to-end


def _write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def _train_csv(tmp_path, t=16, m=6, seed=0):
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(t, m))
    path = tmp_path / "train.csv"
    np.savetxt(path, samples, delimiter=",")
    return str(path)


def test_main_exit_codes(tmp_path, monkeypatch):
    bad = _write_config(tmp_path, "bad.json", {"not_a_key": 1})
    assert main(["train", "--config", bad]) == 2

    missing_model = _write_config(tmp_path, "rec.json", {
        "model": str(tmp_path / "nope.model"),
        "images": ["x.pgm"],
        "out": str(tmp_path / "o1"),
    })
    assert main(["recover", "--config", missing_model]) == 3

    csv_cfg = _write_config(tmp_path, "train_missing.json", {
        "train_csv": str(tmp_path / "missing.csv"),
        "k": 4, "l": 1,
        "out": str(tmp_path / "o2"),
    })
    assert main(["train", "--config", csv_cfg]) == 3

    def explode(*a, **k):
        raise ConvergenceError("did not converge", kkt_residual=0.5)

    monkeypatch.setattr(cli, "learn_alt_opt", explode)
    alt_cfg = _write_config(tmp_path, "alt.json", {
        "train_csv": _train_csv(tmp_path),
        "method": "altopt", "k": 4,
        "out": str(tmp_path / "o3"),
    })
    assert main(["train", "--config", alt_cfg]) == 4

    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main(["not-a-command"])
    assert exc.value.code == 2


def test_cluster_method_flag_must_apply(tmp_path):
    samples, labels = union_of_subspaces(12, 4, seed=0)
    ds = tmp_path / "ds.csv"
    rows = [",".join(repr(float(v)) for v in samples[:, i]) + f",{labels[i]}"
            for i in range(12)]
    ds.write_text("\n".join(rows) + "\n")
    manifest = tmp_path / "ds.manifest.json"
    manifest.write_text(json.dumps({"name": "toy", "T": 12, "M": 4, "k": 2}))
    cfg = _write_config(tmp_path, "cl.json", {
        "dataset_csv": str(ds), "manifest": str(manifest),
        "out": str(tmp_path / "oc"),
    })
    # exmld is a --method choice but has no clustering path
    assert main(["cluster", "--config", cfg, "--method", "exmld"]) == 2
    # a missing manifest is a data error
    cfg2 = _write_config(tmp_path, "cl2.json", {
        "dataset_csv": str(ds), "out": str(tmp_path / "oc2"),
    })
    assert main(["cluster", "--config", cfg2]) == 3


def test_train_cli_deterministic_and_env_layer(tmp_path, monkeypatch):
    train_csv = _train_csv(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    base = {"train_csv": train_csv, "k": 8, "l": 2, "lambda_train": 0.1}
    cfg1 = _write_config(tmp_path, "t1.json", {**base, "out": str(out1)})
    cfg2 = _write_config(tmp_path, "t2.json", {**base, "out": str(out2)})
    monkeypatch.setenv("ENSPARSE_SEED", "5")
    assert main(["train", "--config", cfg1]) == 0
    assert main(["train", "--config", cfg2]) == 0
    monkeypatch.delenv("ENSPARSE_SEED")

    resolved = json.loads((out1 / "train_config.json").read_text())
    assert resolved["config"]["seed"] == 5  # environment layer applied

    assert (out1 / "randexav.model").read_bytes() == \
        (out2 / "randexav.model").read_bytes()
    assert (out1 / "training_trace.csv").read_bytes() == \
        (out2 / "training_trace.csv").read_bytes()

    name, _, header, rows = read_csv(out1 / "training_trace.csv")
    assert name == "train-trace-weights"
    assert header == ["round", "beta"]
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(float(r[1]) == 0.5 for r in rows)


def test_train_cli_flag_overrides_env(tmp_path, monkeypatch):
    train_csv = _train_csv(tmp_path)
    out = tmp_path / "r3"
    cfg = _write_config(tmp_path, "t3.json", {
        "train_csv": train_csv, "k": 8, "l": 1, "out": str(out)})
    monkeypatch.setenv("ENSPARSE_SEED", "5")
    assert main(["train", "--config", cfg, "--seed", "9",
                 "--workers", "2"]) == 0
    resolved = json.loads((out / "train_config.json").read_text())
    assert resolved["config"]["seed"] == 9
    assert resolved["config"]["workers"] == 2


def test_randexav_single_member_model(tmp_path):
    train_csv = _train_csv(tmp_path, t=20, m=6, seed=3)
    out = tmp_path / "single"
    cfg = _write_config(tmp_path, "s.json", {
        "train_csv": train_csv, "k": 8, "l": 1, "seed": 2,
        "lambda_train": 0.1, "out": str(out)})
    assert main(["train", "--config", cfg]) == 0
    model = load_model(out / "randexav.model")
    assert model.n_models == 1
    raw = np.loadtxt(train_csv, delimiter=",", ndmin=2).T
    member = model.dictionaries[0]
    np.testing.assert_array_equal(
        apply_ensemble_batch(model, raw, 0.1),
        member.atoms @ code_batch(raw, member, 0.1))


def test_recover_cli_matches_library(tmp_path):
    img_path = tmp_path / "img.pgm"
    write_pgm(img_path, texture_image((16, 16), seed=2))
    train = patch_corpus(200, patch_size=8, seed=0)
    model = train_randexav(train, 16, 2, seed=1, lambda_train=0.1)
    model_path = tmp_path / "m.model"
    save_model(model_path, model)
    out = tmp_path / "rec"
    cfg = _write_config(tmp_path, "r.json", {
        "model": str(model_path), "images": [str(img_path)],
        "n_list": [16], "n_seeds": 1, "operator_seed": 77,
        "lambda_test": 0.1, "out": str(out)})
    assert main(["recover", "--config", cfg]) == 0

    name, _, header, rows = read_csv(out / "recovery.csv")
    assert name == "recovery"
    assert header == ["image", "method", "n", "seed", "psnr_db"]
    assert len(rows) == 2  # one seed row + one mean row
    seed_row = rows[0]
    assert seed_row[:4] == ["img.pgm", "randexav", "16", "77"]
    _, db = compressive_recover(read_image(img_path), model, 16, 0.1, 77)
    assert float(seed_row[4]) == float(db)
    assert rows[1][3] == "mean"
    assert float(rows[1][4]) == float(db)

    summary = json.loads((out / "recovery_summary.json").read_text())
    assert summary["mean_psnr_db"]["img.pgm:n=16"] == float(db)


def test_superres_cli_matches_library(tmp_path):
    train_path = tmp_path / "tr.pgm"
    test_path = tmp_path / "te.pgm"
    write_pgm(train_path, texture_image((48, 48), seed=0))
    write_pgm(test_path, texture_image((40, 40), seed=8))
    out = tmp_path / "sr"
    cfg = _write_config(tmp_path, "sr.json", {
        "train_images": [str(train_path)], "images": [str(test_path)],
        "k": 24, "l": 2, "max_pairs": 500, "seed": 4,
        "out": str(out)})
    assert main(["superres", "--config", cfg]) == 0

    name, _, header, rows = read_csv(out / "superres.csv")
    assert name == "superres"
    assert header == ["image", "method", "scale", "seed", "psnr_db"]
    assert [r[1] for r in rows] == ["bicubic", "randexav"]

    model = load_model(out / "superres_randexav.model")
    ref = read_image(test_path)
    operator = BlurDownsample(ref.shape, 2)
    low = operator.apply(ref)
    bic_db = psnr(ref, np.clip(bicubic_resize(low, 2), 0.0, 1.0))
    sr_db = psnr(ref, superresolve(low, model, 2, 0.2, 1.0, 20))
    assert float(rows[0][4]) == float(bic_db)
    assert float(rows[1][4]) == float(sr_db)

    # rerunning against the saved model reproduces the same scores
    out2 = tmp_path / "sr2"
    cfg2 = _write_config(tmp_path, "sr2.json", {
        "model": str(out / "superres_randexav.model"),
        "images": [str(test_path)], "out": str(out2)})
    assert main(["superres", "--config", cfg2]) == 0
    _, _, _, rows2 = read_csv(out2 / "superres.csv")
    assert [r[4] for r in rows2] == [r[4] for r in rows]


def test_superres_cli_rejects_wrong_model(tmp_path):
    train = patch_corpus(100, patch_size=6, seed=0)
    model_path = tmp_path / "patch.model"
    save_model(model_path, train_randexav(train, 8, 2, seed=0))
    img_path = tmp_path / "t.pgm"
    write_pgm(img_path, texture_image((16, 16), seed=0))
    cfg = _write_config(tmp_path, "bad_sr.json", {
        "model": str(model_path), "images": [str(img_path)],
        "out": str(tmp_path / "osr")})
    assert main(["superres", "--config", cfg]) == 3


def test_cluster_cli_matches_library(tmp_path):
    samples, labels = union_of_subspaces(24, 8, n_subspaces=2, seed=5)
    ds = tmp_path / "ds.csv"
    rows_txt = [",".join(repr(float(v)) for v in samples[:, i]) + f",{labels[i]}"
                for i in range(24)]
    ds.write_text("\n".join(rows_txt) + "\n")
    manifest = tmp_path / "ds.manifest.json"
    manifest.write_text(json.dumps({"name": "unit", "T": 24, "M": 8, "k": 2}))
    out = tmp_path / "cl"
    cfg = _write_config(tmp_path, "cl.json", {
        "dataset_csv": str(ds), "manifest": str(manifest),
        "methods": ["l1graph"], "n_seeds": 1, "seed": 3,
        "lambda_test": 0.1, "out": str(out)})
    assert main(["cluster", "--config", cfg]) == 0

    name, _, header, rows = read_csv(out / "clustering.csv")
    assert name == "clustering"
    assert header == ["dataset", "method", "seed", "accuracy", "nmi"]
    assert [r[2] for r in rows] == ["3", "max", "avg"]

    data = TrainingSet(center_normalize(samples))
    graph = build_l1_graph(data, 0.1)
    res = spectral_cluster(graph, 2, seed=3, truth=labels)
    assert float(rows[0][3]) == res.accuracy
    assert float(rows[0][4]) == res.nmi
    assert float(rows[1][3]) == res.accuracy  # max over one seed
    assert float(rows[2][3]) == res.accuracy  # avg over one seed


def test_oracle_demo_cli(tmp_path):
    out = tmp_path / "od"
    cfg = _write_config(tmp_path, "od.json", {
        "n_patches": 600, "n_test": 200, "k_list": [16, 32],
        "k_trainers": 16, "l": 3, "out": str(out)})
    assert main(["oracle-demo", "--config", cfg]) == 0

    name, _, header, rows = read_csv(out / "oracle_cases.csv")
    assert name == "oracle-cases"
    assert header == ["k", "case", "mean_residual"]
    assert len(rows) == 8  # two K values x four cases
    by_k = {}
    for k, case, val in rows:
        by_k.setdefault(int(k), {})[case] = float(val)
    for k, cases in by_k.items():
        assert cases["unconstrained"] <= cases["nonneg"] + 1e-12
        assert cases["nonneg"] <= cases["simplex"] + 1e-12
        assert cases["unconstrained"] <= cases["sum_one"] + 1e-12
        assert cases["sum_one"] <= cases["simplex"] + 1e-12
    for case in by_k[16]:
        assert by_k[32][case] <= by_k[16][case]  # more atoms help

    name, _, header, rows = read_csv(out / "oracle_trainers.csv")
    assert name == "oracle-trainers"
    assert header == ["method", "l", "mean_residual"]
    table = {(r[0], int(r[1])): float(r[2]) for r in rows}
    for method in ("randexav", "boostex", "boostkm"):
        assert all((method, l) in table for l in (1, 2, 3))
        best_single = table[(f"min_individual_{method}", 0)]
        assert table[(method, 3)] <= best_single

    # oracle corpus smaller than a requested K is a data error
    cfg2 = _write_config(tmp_path, "od2.json", {
        "n_patches": 30, "n_test": 10, "k_list": [64],
        "k_trainers": 8, "l": 2, "out": str(tmp_path / "od2")})
    assert main(["oracle-demo", "--config", cfg2]) == 3
