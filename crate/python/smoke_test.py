"""Smoke test for the mmpc extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or
point MMPC_LIB_DIR at a directory holding the built `mmpc` extension.
"""

import os
import sys

if os.environ.get("MMPC_LIB_DIR"):
    sys.path.insert(0, os.environ["MMPC_LIB_DIR"])

import mmpc


def main():
    bits = mmpc.prbs(5, 31)
    assert len(bits) == 31 and set(bits) == {-1.0, 1.0}

    p, k = mmpc.dare([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    assert abs(p[0][0] - 1.1327822) < 1e-6, p

    u, obj, active = mmpc.qp([[2.0, 0.0], [0.0, 2.0]], [-2.0, -4.0], [[0.0, 1.0]], [1.0])
    assert abs(u[0] - 1.0) < 1e-8 and abs(u[1] - 1.0) < 1e-8 and active == [0]

    plant = mmpc.FccuPlant(seed=1)
    u_ss, y_ss = plant.u_ss, plant.y_ss
    u_seq = [[u_ss[0] + 4.0 * a, u_ss[1] + 1.0 * b]
             for a, b in zip(mmpc.prbs(10, 2000, clock_period=4),
                             mmpc.prbs(10, 2000, clock_period=4, seed=7))]
    y_seq = []
    for row in u_seq:
        y_seq.append(plant.measure(row))
        plant.advance(row)
    model, report, fit = mmpc.identify(u_seq, y_seq, plant.ts, future=15, max_order=6, riccati_gain=True)
    assert min(fit) > 80.0, fit
    print(model, "validation fit", [round(f, 2) for f in fit])

    ctrl = mmpc.MpcController(model, 20, 5, u_ss, move_weights=[0.1, 0.1],
                              y_min=[0.0, 0.0], y_max=[800.0, 1150.0])
    bank = mmpc.ModelBank([ctrl, ctrl])
    plant = mmpc.FccuPlant(seed=1)
    u = list(u_ss)
    setpoint = [y_ss[0] + 2.0, y_ss[1]]
    for _ in range(120):
        y = plant.measure(u)
        u, selected, j_values = bank.step(y, setpoint)
        assert selected == 0
        plant.advance(u)
    y = plant.measure(u)
    assert abs(y[0] - setpoint[0]) < 0.5, y
    print("closed loop y", [round(v, 3) for v in y], "selection", bank.selection_frequency())
    print("smoke test passed")


if __name__ == "__main__":
    main()
