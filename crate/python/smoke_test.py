"""Smoke test for the pyflexcap extension.

Build and install with `maturin develop -m crates/python/Cargo.toml` (or
`pip install --no-build-isolation ./crates/python`), then run this file.
"""

import math

import pyflexcap as fc


def main():
    grid = fc.FrequencyGrid(4096, 20.0)
    target = fc.SpectralDensity.band(grid, 0.05, 0.4, 2.0)
    x = fc.synthesize(target, 4096, seed=7)
    est = fc.periodogram([x], grid)
    rel = abs(est.integral() - target.integral()) / target.integral()
    print(f"variance identity: relative error {rel:.2e}")
    assert rel < 0.05

    assert math.isclose(fc.chebyshev_bound(2.0, 0.25), 1.0)

    n = 2 ** 14
    grid = fc.FrequencyGrid(n, 20.0)
    lo, hi = 2 * math.pi * 20.0 / 1800.0, 2 * math.pi * 20.0 / 60.0
    sba = fc.SpectralDensity.band(grid, lo, hi, 5.0e8)
    building = fc.Building(n=2000)
    model = building.capacity(sba, 20, lo, hi, mode="model")
    data = building.capacity(sba, 20, lo, hi, mode="data", seed=3)
    gap = data.capacity_sd.relative_l2(model.capacity_sd)
    print(f"capacity: active {model.active_constraints}, model vs data {gap:.2e}")
    assert model.kkt_residual <= 1e-6
    assert gap < 0.1
    assert model.active_constraints == data.active_constraints
    print("ok")


if __name__ == "__main__":
    main()
