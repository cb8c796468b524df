import json

import numpy as np
import pytest

from nof1iv import io as nio
from nof1iv.errors import ConfigError, DataError
from nof1iv.sim_models import simulate_trial

from conftest import make_trial

BASE = {
    "family": "ARMA11", "phi1": 0.5, "theta1": 0.3, "beta": 0.5, "lambda": 1.0, "eta": 1.0,
    "kind": "complex", "alpha": 1.5, "omega": 1.0, "gamma": 1.0, "varphi": 0.5, "rho": 0.3,
    "n": 120, "seed": 11,
}


def test_model_spec_round_trip():
    spec = nio.model_spec_from_dict(BASE)
    assert spec.response.lam == 1.0 and spec.compliance.rho == 0.3
    doc = nio.model_spec_to_dict(spec)
    assert doc["schema_version"] == nio.SCHEMA_VERSION
    assert nio.model_spec_from_dict(doc) == spec


@pytest.mark.parametrize(
    "change, field",
    [
        ({"phi1": 1.2}, "phi1"),
        ({"rho": -1.0}, "rho"),
        ({"alpha": 0.0}, "alpha"),
        ({"n": 5}, "n"),
        ({"n": 10.5}, "n"),
        ({"family": "ARMA99"}, "family"),
        ({"kind": "chaotic"}, "kind"),
        ({"errors": "cauchy"}, "errors"),
        ({"beta": "big"}, "beta"),
        ({"bogus": 1}, "bogus"),
        ({"seed": -3}, "seed"),
    ],
)
def test_config_errors_name_field(change, field):
    with pytest.raises(ConfigError) as info:
        nio.model_spec_from_dict({**BASE, **change})
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_missing_required_key():
    doc = dict(BASE)
    del doc["alpha"]
    with pytest.raises(ConfigError) as info:
        nio.model_spec_from_dict(doc)
    assert info.value.field == "alpha"


def test_nonstationary_override():
    spec = nio.model_spec_from_dict({**BASE, "phi1": 1.0}, allow_nonstationary=True)
    assert spec.allow_nonstationary


def test_trial_csv_round_trip():
    t = make_trial(seed=3, n=60)
    text = nio.trial_to_csv(t)
    assert text.splitlines()[0] == "t,z,x,y,w,observed"
    back = nio.trial_from_csv(text)
    for name in ("z", "x", "y", "w", "observed"):
        assert np.array_equal(getattr(back, name), getattr(t, name))


def test_trial_json_matches_csv():
    spec = nio.model_spec_from_dict(BASE)
    t = simulate_trial(spec).with_values(observed=np.arange(120) % 5 != 0)
    back, meta = nio.trial_from_json(nio.trial_to_json(t, spec))
    via_csv = nio.trial_from_csv(nio.trial_to_csv(t))
    for name in ("z", "x", "y", "w", "observed"):
        assert np.array_equal(getattr(back, name), getattr(via_csv, name))
    assert nio.model_spec_from_dict(meta) == spec
    assert json.loads(nio.trial_to_json(t))["schema_version"] == nio.SCHEMA_VERSION


def test_trial_csv_without_w_or_mask():
    t = nio.trial_from_csv("z,x,y\n1,1,2\n0,0,0\n1,1,2\n0,1,1\n")
    assert t.w is None and t.observed.all()


@pytest.mark.parametrize(
    "text, msg",
    [
        ("t,z,y\n0,1,2\n", "x"),
        ("z,x,y\n", "no rows"),
        ("z,x,y\n1,1,abc\n", "numeric"),
        ("z,x,y\n2,1,1\n0,0,0\n", "0/1"),
    ],
)
def test_bad_trial_files(text, msg):
    with pytest.raises(DataError, match=msg):
        nio.trial_from_csv(text)


def test_dumps_is_deterministic_and_nan_safe():
    a = nio.dumps({"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2)})
    assert a == '{"a": 1.5, "b": null, "c": [0, 1]}'
