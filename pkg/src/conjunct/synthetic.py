"""Synthetic conjunction events for tests, demos and smoke runs.

The generator draws the final risk class first, then the final risk, then
walks backwards to the earlier CDMs. With ``learnable=True`` the change from
the latest known risk to the final risk is a noisy linear function of three
attributes of the latest CDM before the cutoff (``max_risk_scaling``,
``mahalanobis_distance``, ``c_position_covariance_det``).

Run ``python -m conjunct.synthetic OUT.csv`` to write a CSV export.
"""

from __future__ import annotations

import argparse

import numpy as np

from .cdm import Cdm, Event

OBJECT_TYPES = ("PAYLOAD", "DEBRIS", "ROCKET BODY", "UNKNOWN")
SIGNAL_FEATURES = ("max_risk_scaling", "mahalanobis_distance", "c_position_covariance_det")
SIGNAL_WEIGHTS = (0.9, -0.7, 0.5)


def _final_risks(rng, n, high_fraction):
    n_high = int(round(high_fraction * n))
    high = np.zeros(n, dtype=bool)
    high[rng.choice(n, size=n_high, replace=False)] = True
    r = np.where(rng.random(n) < 0.5, -30.0, rng.uniform(-20.0, -6.05, n))
    r[high] = rng.uniform(-6.0, -3.0, n_high)
    return r


def make_events(
    n_events: int = 500,
    high_fraction: float = 0.05,
    seed: int = 0,
    learnable: bool = False,
    noise: float = 0.3,
    eligible_fraction: float = 1.0,
    n_missions: int = 5,
    missing_rate: float = 0.0,
) -> list[Event]:
    """Random events; all eligible for the test set unless ``eligible_fraction < 1``."""
    rng = np.random.default_rng(seed)
    r_final = _final_risks(rng, n_events, high_fraction)
    signals = rng.normal(size=(n_events, 3))
    if learnable:
        h = signals @ np.array(SIGNAL_WEIGHTS) + rng.normal(scale=noise, size=n_events)
    else:
        h = rng.normal(scale=0.8, size=n_events)
    r_latest = np.clip(r_final - h, -30.0, 0.0)
    events = []
    for i in range(n_events):
        eligible = rng.random() < eligible_fraction
        n_early = int(rng.integers(1, 8))
        early = np.sort(rng.uniform(2.0, 7.0, n_early))[::-1]
        if eligible:
            late = [float(rng.uniform(0.0, 0.99))]
        else:
            # last CDM too far from TCA
            late = [float(rng.uniform(1.0, 1.99))]
        times = list(early) + late
        walk = r_latest[i] + np.cumsum(rng.normal(scale=0.4, size=n_early))[::-1]
        risks = list(np.clip(np.append(walk[:-1], r_latest[i]), -30.0, 0.0)) + [r_final[i]]
        mission = str(int(rng.integers(n_missions)))
        object_type = OBJECT_TYPES[int(rng.integers(len(OBJECT_TYPES)))]
        t_span = float(rng.uniform(0.2, 10.0))
        cdms = []
        for j, (t, risk) in enumerate(zip(times, risks)):
            jitter = 0.0 if j >= n_early - 1 else 0.05
            values = {
                "max_risk_scaling": signals[i, 0] + rng.normal(scale=jitter) if jitter else signals[i, 0],
                "mahalanobis_distance": signals[i, 1] + rng.normal(scale=jitter) if jitter else signals[i, 1],
                "c_position_covariance_det": signals[i, 2] + rng.normal(scale=jitter) if jitter else signals[i, 2],
                "c_obs_used": float(rng.integers(5, 300)),
                "max_risk_estimate": float(min(0.0, risk + rng.uniform(0.0, 3.0))),
            }
            if missing_rate:
                for key in ("mahalanobis_distance", "c_obs_used"):
                    if rng.random() < missing_rate:
                        values[key] = None
            cdms.append(Cdm(
                time_to_tca=float(t),
                risk=float(risk),
                mission_id=mission,
                c_object_type=object_type,
                t_span=t_span,
                miss_distance=float(rng.uniform(50.0, 60000.0)),
                relative_speed=float(rng.uniform(10.0, 15000.0)),
                features={"c_sigma_t": float(rng.lognormal(3.0, 1.0)), "SSN": float(rng.integers(0, 150))},
                **{k: (None if v is None else float(v)) for k, v in values.items()},
            ))
        events.append(Event(str(i), cdms))
    return events


def main(argv=None):
    from .ingest import write_dataset_csv

    parser = argparse.ArgumentParser(prog="python -m conjunct.synthetic", description=__doc__.splitlines()[0])
    parser.add_argument("out")
    parser.add_argument("--events", type=int, default=1000)
    parser.add_argument("--high-fraction", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--learnable", action="store_true")
    args = parser.parse_args(argv)
    write_dataset_csv(make_events(args.events, args.high_fraction, args.seed, args.learnable), args.out)


if __name__ == "__main__":
    main()
