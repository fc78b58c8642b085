"""Smoke test for the featvae Python bindings.

Build and install the extension first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke.py`. Pass `--pipeline DIR` to also run the
full desk pipeline (several minutes on one core).
"""

import argparse
import math
import random
import sys
import tempfile

import featvae


def check_schedule():
    s = featvae.BetaSchedule()
    assert s.beta_at(5) == 0.005
    assert s.beta_at(79) == 0.4
    assert abs(s.beta_at(45) - 0.207) < 1e-5
    values = s.values()
    assert all(a <= b for a, b in zip(values, values[1:]))
    b = featvae.BetaSchedule.appendix_b()
    assert b.epochs == 100 and b.beta_at(0) == 0.001
    try:
        featvae.BetaSchedule(t_start=50, t_end=10)
    except featvae.ConfigError:
        pass
    else:
        raise AssertionError("inverted window accepted")
    print("schedule ok:", s)


def check_elbo():
    total, mse, kld = featvae.elbo_loss([[0.0]], [[0.0]], [[1.0]], [[0.0]], 1.0)
    assert abs(kld - 0.5) < 1e-9 and mse == 0.0 and abs(total - 0.5) < 1e-9
    _, _, kld = featvae.elbo_loss([[0.0]], [[0.0]], [[0.0]], [[0.0]], 1.0)
    assert kld == 0.0
    print("elbo ok")


def check_metrics():
    factors = [("a", 4), ("b", 5), ("c", 3)]
    labels = [[i % 4, (i // 4) % 5, (i // 20) % 3] for i in range(60 * 4)]
    identity = [[float(v) for v in row] for row in labels]
    scores = featvae.evaluate(identity, labels, factors, seed=1)
    assert set(scores) == {
        "factorvae", "dci_disentanglement", "dci_completeness",
        "dci_informativeness", "sap", "mig", "irs",
    }
    assert min(scores.values()) >= 0.95, scores
    rng = random.Random(0)
    noise = [[rng.gauss(0, 1) for _ in range(6)] for _ in labels]
    scores = featvae.evaluate(noise, labels, factors, seed=1)
    assert scores["mig"] <= 0.05 and scores["dci_disentanglement"] <= 0.2, scores
    print("metrics ok")


def check_dataset_and_vae():
    data = featvae.generate("toy", seed=3, factors=[("hue", 3), ("shape", 2)], image_size=16)
    assert len(data) == 6 and data.factors == [("hue", 3), ("shape", 2)]
    assert len(data.image(0)) == 3 * 16 * 16

    rng = random.Random(1)
    x = []
    for _ in range(128):
        row = [abs(rng.gauss(0, 1)) for _ in range(32)]
        norm = math.sqrt(sum(v * v for v in row))
        x.append([v / norm for v in row])
    model, history = featvae.train_vae(x, preset="desk", seed=2, epochs=3)
    assert len(history) == 3 and all(math.isfinite(r["total"]) for r in history)
    z = model.represent(x[:5])
    assert len(z) == 5 and len(z[0]) == model.latent_dim
    print("dataset and vae ok; final mse", round(history[-1]["mse"], 5))


def check_pipeline(out_dir):
    p = featvae.Pipeline(out_dir, seed=0)
    for stage, ran in p.run_all():
        print(f"  {stage}: {'ran' if ran else 'up to date'}")
    report, noise = p.scores()
    print(p.report())
    assert report["factorvae"] > noise["factorvae"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pipeline", metavar="DIR", help="also run the desk pipeline in DIR")
    args = ap.parse_args()

    check_schedule()
    check_elbo()
    check_metrics()
    check_dataset_and_vae()
    with tempfile.TemporaryDirectory() as d:
        try:
            featvae.Pipeline(d).run_stage("extract")
        except featvae.PipelineError as e:
            print("missing upstream rejected:", e)
        else:
            raise AssertionError("extract ran without upstream stages")
    if args.pipeline:
        check_pipeline(args.pipeline)
    print("smoke ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
