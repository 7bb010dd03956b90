import json

import numpy as np
import pytest

from mbespike.errors import InvalidArgument, StoreVersionError
from mbespike.fitting import FitConfig, TargetFn, fit_mbe, fit_mbe_no_decay
from mbespike.store import (
    STORE_ENV,
    ApproximatorStore,
    StoreDocument,
    approximator_from_payload,
    approximator_to_payload,
    created_with,
    dumps,
    load_document,
    loads,
    model_from_payload,
    model_to_payload,
    profile_from_payload,
    profile_to_payload,
    save_document,
    snn_from_payload,
    snn_to_payload,
)
from mbespike.transformer import calibrate, forward_spiking

FAST = FitConfig(M=600, epochs=10, pool_size=32, search_budget=100, exchange_rounds=1, search_M=None)


def _through_json(kind, payload):
    return loads(dumps(StoreDocument(kind, payload))).payload


def _resave(doc):
    return dumps(loads(dumps(doc)))


@pytest.fixture(scope="module")
def small_fit():
    return fit_mbe(TargetFn("gelu", (-3, 3)), 2, 8, FAST)


class TestDocuments:
    def test_layout(self):
        text = dumps(StoreDocument("report", {"b": 1.5, "a": [1, 2]}, created_with(seed=3)))
        raw = json.loads(text)
        assert raw["format_version"] == 1 and raw["kind"] == "report"
        assert raw["created_with"]["seed"] == 3 and "package_version" in raw["created_with"]
        assert text.endswith("}\n")
        assert list(raw) == sorted(raw)

    def test_numpy_values(self):
        doc = StoreDocument("report", {"x": np.arange(3.0), "n": np.int64(4), "ok": np.bool_(True)})
        assert loads(dumps(doc)).payload == {"x": [0.0, 1.0, 2.0], "n": 4, "ok": True}

    def test_float_exact(self):
        vals = [0.1, 1 / 3, 2.0**-1074, 1.7976931348623157e308, -0.0]
        back = loads(dumps(StoreDocument("report", {"v": vals}))).payload["v"]
        assert [v.hex() for v in back] == [v.hex() for v in vals]

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            dumps(StoreDocument("report", {"v": float("nan")}))

    def test_future_version(self):
        text = dumps(StoreDocument("report", {})).replace('"format_version": 1', '"format_version": 2')
        with pytest.raises(StoreVersionError, match="format_version 2"):
            loads(text)

    @pytest.mark.parametrize("text", ["not json", "[]", '{"kind": "report"}'])
    def test_garbage(self, text):
        with pytest.raises(InvalidArgument):
            loads(text)

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgument):
            dumps(StoreDocument("weights", {}))
        with pytest.raises(InvalidArgument):
            loads('{"format_version": 1, "kind": "weights", "payload": {}}')

    def test_kind_check(self, tmp_path):
        p = save_document(StoreDocument("report", {}), tmp_path / "r.json")
        with pytest.raises(InvalidArgument, match="approximator"):
            load_document(p, "approximator")

    def test_file_round_trip(self, tmp_path):
        doc = StoreDocument("report", {"rows": [{"a": 1.25}]}, {"seed": 1})
        p = save_document(doc, tmp_path / "sub" / "r.json")
        again = load_document(p, "report")
        assert again.payload == doc.payload and again.created_with == doc.created_with
        assert save_document(again, tmp_path / "r2.json").read_bytes() == p.read_bytes()


class TestApproximators:
    def test_mbe_round_trip(self, small_fit):
        payload = approximator_to_payload(small_fit)
        back = approximator_from_payload(_through_json("approximator", payload))
        assert back.mse == small_fit.mse and back.config == small_fit.config
        x = np.linspace(-3, 3, 1001)
        np.testing.assert_array_equal(back(x), small_fit(x))
        doc = StoreDocument("approximator", payload)
        assert _resave(doc) == dumps(doc)

    def test_free_round_trip(self):
        fa = fit_mbe_no_decay(TargetFn("inv", (0.5, 1)), 2, 6, FAST)
        back = approximator_from_payload(_through_json("approximator", approximator_to_payload(fa)))
        x = np.linspace(0.5, 1, 301)
        np.testing.assert_array_equal(back(x), fa(x))


class TestModels:
    def test_model_round_trip(self, desk):
        _, model, _ = desk
        back = model_from_payload(_through_json("model", model_to_payload(model)))
        assert back.config == model.config
        for k, w in model.weights.items():
            assert back.weights[k].tobytes() == w.tobytes()

    def test_profile_round_trip(self, desk, rng):
        _, model, _ = desk
        prof = calibrate(model, [rng.standard_normal((2, 8, 32))])
        doc = StoreDocument("calibration", profile_to_payload(prof))
        back = profile_from_payload(loads(dumps(doc)).payload)
        assert back == prof
        assert _resave(doc) == dumps(doc)

    def test_snn_round_trip(self, desk, rng):
        _, _, snn = desk
        doc = StoreDocument("model", snn_to_payload(snn))
        back = snn_from_payload(loads(dumps(doc)).payload)
        x = rng.standard_normal((2, 8, 32))
        assert forward_spiking(back, x)[0].tobytes() == forward_spiking(snn, x)[0].tobytes()
        assert _resave(doc) == dumps(doc)


class TestApproximatorStore:
    def test_persists(self, tmp_path):
        t = TargetFn("tanh", (-2, 2))
        a = ApproximatorStore(tmp_path).get(t, 2, 6, FAST)
        files = list(tmp_path.glob("*.json"))
        assert len(files) == 1 and files[0].name.startswith("tanh-N2-T6-")
        before = files[0].read_bytes()
        b = ApproximatorStore(tmp_path).get(t, 2, 6, FAST)
        assert b.mse == a.mse
        np.testing.assert_array_equal(b.neuron.w, a.neuron.w)
        assert files[0].read_bytes() == before

    def test_no_decay_name(self, tmp_path):
        ApproximatorStore(tmp_path).get(TargetFn("inv", (0.5, 1)), 2, 6, FAST, no_decay=True)
        assert [p.name.split("-")[:2] for p in tmp_path.glob("*.json")] == [["inv", "nodecay"]]

    def test_env_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv(STORE_ENV, str(tmp_path))
        assert ApproximatorStore().directory == tmp_path

    def test_memory_only(self, monkeypatch):
        monkeypatch.delenv(STORE_ENV, raising=False)
        assert ApproximatorStore().directory is None
