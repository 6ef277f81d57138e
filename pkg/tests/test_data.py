import numpy as np
import pytest

from flowshot.data import (
    ColumnMapping,
    FamilySpec,
    SyntheticConfig,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_flows,
    sample_fraction,
    save_flows,
    synthetic_preset,
    train_test_split,
)
from flowshot.errors import ConfigError, DataError, ParseError, SchemaError

HEADER = "IPV4_SRC_ADDR,IPV4_DST_ADDR,f0,f1,f2,Label,Attack\n"


def write_csv(tmp_path, body, header=HEADER, name="flows.csv"):
    path = tmp_path / name
    path.write_text(header + body)
    return path


def test_load_three_rows_in_file_order(tmp_path):
    path = write_csv(
        tmp_path,
        "10.0.0.1,10.0.0.2,1.0,2.0,3.0,0,Benign\n"
        "10.0.0.2,10.0.0.1,4.0,5.0,6.0,1,DoS\n"
        "10.0.0.3,10.0.0.1,7.0,8.0,9.0,0,Benign\n",
    )
    ds = load_flows(path)
    assert len(ds) == 3
    assert ds.schema == ["f0", "f1", "f2"]
    assert list(ds.src) == ["10.0.0.1", "10.0.0.2", "10.0.0.3"]
    assert np.array_equal(ds.features[1], [4.0, 5.0, 6.0])
    assert list(ds.labels) == [0, 1, 0]
    assert list(ds.families) == [None, "DoS", None]
    rec = ds.record(1)
    assert rec.src_addr == "10.0.0.2" and rec.family == "DoS" and rec.label == 1


def test_load_missing_family_column_is_schema_error(tmp_path):
    path = write_csv(
        tmp_path,
        "10.0.0.1,10.0.0.2,1.0,2.0,3.0,0\n",
        header="IPV4_SRC_ADDR,IPV4_DST_ADDR,f0,f1,f2,Label\n",
    )
    with pytest.raises(SchemaError, match="Attack"):
        load_flows(path)


def test_load_nonnumeric_feature_is_row_indexed_error(tmp_path):
    path = write_csv(
        tmp_path,
        "10.0.0.1,10.0.0.2,1.0,2.0,3.0,0,Benign\n"
        "10.0.0.1,10.0.0.2,oops,2.0,3.0,0,Benign\n",
    )
    with pytest.raises(ParseError, match="row 1"):
        load_flows(path)


def test_load_attack_without_family_rejected(tmp_path):
    path = write_csv(tmp_path, "10.0.0.1,10.0.0.2,1.0,2.0,3.0,1,Benign\n")
    with pytest.raises(ParseError, match="family"):
        load_flows(path)


def test_load_explicit_feature_mapping(tmp_path):
    path = write_csv(tmp_path, "a,b,1.0,2.0,3.0,0,Benign\n")
    ds = load_flows(path, ColumnMapping(features=["f2", "f0"]))
    assert ds.schema == ["f2", "f0"]
    assert np.array_equal(ds.features[0], [3.0, 1.0])
    with pytest.raises(SchemaError, match="nope"):
        load_flows(path, ColumnMapping(features=["nope"]))


def test_save_load_round_trip(tmp_path):
    ds = generate_synthetic(synthetic_preset("blobs3", seed=5, n_flows=120))
    path = tmp_path / "synth.csv"
    save_flows(ds, path)
    back = load_flows(path)
    assert len(back) == len(ds)
    assert back.schema == ds.schema
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    assert list(back.families) == list(ds.families)


# ---------------------------------------------------------------------------
# scaler


def make_dataset(features):
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    from flowshot.data import FlowDataset

    return FlowDataset(
        schema=[f"f{i}" for i in range(features.shape[1])],
        src=np.array(["a"] * n, dtype=object),
        dst=np.array(["b"] * n, dtype=object),
        features=features,
        labels=np.zeros(n, dtype=np.int8),
        families=np.array([None] * n, dtype=object),
    )


def test_scaler_maps_into_unit_interval():
    ds = make_dataset(np.arange(101.0).reshape(-1, 1))
    scaler = fit_scaler(ds, q_low=0.01, q_high=0.99)
    out = apply_scaler(ds, scaler).features
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.min() == 0.0 and out.max() == 1.0  # clipping hits both ends


def test_scaler_constant_feature_maps_to_zero():
    ds = make_dataset(np.full((10, 2), 7.0))
    out = apply_scaler(ds, fit_scaler(ds)).features
    assert np.array_equal(out, np.zeros((10, 2)))


def test_scaler_out_of_range_value_clips_to_one():
    train = make_dataset(np.linspace(0.0, 1.0, 200).reshape(-1, 1))
    scaler = fit_scaler(train)
    probe = make_dataset([[50.0]])
    assert apply_scaler(probe, scaler).features[0, 0] == 1.0


def test_scaler_identity_on_already_normalized_data():
    ds = make_dataset([[0.0], [0.25], [0.5], [1.0]])
    from flowshot.data import Scaler

    ident = Scaler(clip_lo=np.zeros(1), clip_hi=np.ones(1))
    assert np.array_equal(apply_scaler(ds, ident).features, ds.features)


def test_scaler_empty_train_rejected():
    ds = make_dataset(np.zeros((0, 2)))
    with pytest.raises(DataError):
        fit_scaler(ds)


# ---------------------------------------------------------------------------
# sampling / splitting


def test_sample_fraction_exact_size_and_determinism():
    ds = make_dataset(np.arange(1000.0).reshape(-1, 1))
    a = sample_fraction(ds, 0.1, np.random.default_rng(3))
    b = sample_fraction(ds, 0.1, np.random.default_rng(3))
    assert len(a) == 100
    assert np.array_equal(a.features, b.features)
    full = sample_fraction(ds, 1.0, np.random.default_rng(3))
    assert np.array_equal(np.sort(full.features, axis=0), ds.features)


def test_sample_fraction_rejects_bad_frac():
    ds = make_dataset(np.zeros((5, 1)))
    for frac in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            sample_fraction(ds, frac, np.random.default_rng(0))


def test_split_sizes_disjoint_exhaustive_deterministic():
    ds = make_dataset(np.arange(10.0).reshape(-1, 1))
    tr, te = train_test_split(ds, 0.7, np.random.default_rng(9))
    assert len(tr) == 7 and len(te) == 3
    union = np.sort(np.concatenate([tr.features, te.features]).reshape(-1))
    assert np.array_equal(union, ds.features.reshape(-1))
    tr2, te2 = train_test_split(ds, 0.7, np.random.default_rng(9))
    assert np.array_equal(tr.features, tr2.features)
    assert np.array_equal(te.features, te2.features)
    with pytest.raises(ConfigError):
        train_test_split(ds, 1.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# synthetic generation


def test_synthetic_counts_and_apportionment():
    cfg = synthetic_preset("blobs3", seed=0)  # 10000 flows, 2%, 3 equal families
    ds = generate_synthetic(cfg)
    assert len(ds) == 10_000
    assert int(ds.labels.sum()) == 200
    counts = {
        fam: int(np.sum(ds.families == fam)) for fam in ds.attack_families()
    }
    assert sorted(counts.values()) == [66, 67, 67]
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_synthetic_deterministic_per_seed():
    cfg = synthetic_preset("blobs3", seed=11, n_flows=500)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert np.array_equal(a.features, b.features)
    assert list(a.src) == list(b.src)
    assert np.array_equal(a.labels, b.labels)
    c = generate_synthetic(synthetic_preset("blobs3", seed=12, n_flows=500))
    assert not np.array_equal(a.features, c.features)


def test_synthetic_config_validation():
    d = 4
    fam = [FamilySpec("x", 1.0, np.full(d, 0.8), np.full(d, 0.05))]
    base = dict(
        n_flows=100, n_hosts=20, attack_fraction=0.1, families=fam,
        benign_mean=np.full(d, 0.3), benign_std=np.full(d, 0.05), seed=0,
    )
    SyntheticConfig(**base).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(**{**base, "attack_fraction": 0.6}).validate()
    bad_weights = [FamilySpec("x", 0.7, np.full(d, 0.8), np.full(d, 0.05))]
    with pytest.raises(ConfigError):
        SyntheticConfig(**{**base, "families": bad_weights}).validate()


def nearest_centroid_macro_f1(ds) -> float:
    """Depth-0 oracle: classify each flow by its nearest labeled centroid."""
    fams = ds.attack_families()
    centroids = [ds.features[ds.labels == 0].mean(axis=0)]
    for fam in fams:
        centroids.append(ds.features[ds.families == fam].mean(axis=0))
    centroids = np.stack(centroids)
    dists = np.linalg.norm(ds.features[:, None, :] - centroids[None], axis=2)
    pred = (np.argmin(dists, axis=1) > 0).astype(int)
    truth = ds.labels.astype(int)

    def f1(cls):
        tp = np.sum((pred == cls) & (truth == cls))
        fp = np.sum((pred == cls) & (truth != cls))
        fn = np.sum((pred != cls) & (truth == cls))
        if tp == 0:
            return 0.0
        p, r = tp / (tp + fp), tp / (tp + fn)
        return 2 * p * r / (p + r)

    return (f1(0) + f1(1)) / 2


def test_synthetic_blobs_separable_by_nearest_centroid():
    # family means sit >= 3 sigma from the benign mean, so a raw-feature
    # nearest-centroid classifier must already do well
    ds = generate_synthetic(synthetic_preset("blobs3", seed=2, n_flows=4000))
    assert nearest_centroid_macro_f1(ds) > 0.95


def test_other_presets_generate():
    for name, frac in (("cse_like", 0.12), ("unsw_like", 0.04)):
        ds = generate_synthetic(synthetic_preset(name, seed=1, n_flows=1000))
        assert len(ds) == 1000
        assert int(ds.labels.sum()) == round(frac * 1000)
    with pytest.raises(ConfigError):
        synthetic_preset("nope")
