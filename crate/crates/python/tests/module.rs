use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

use spillfree_py::spillfree_module;

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    pyo3::append_to_inittab!(spillfree_module);
    Python::attach(|py| {
        let m = py.import("spillfree").unwrap();
        f(&m);
    });
}

#[test]
fn module_round_trip() {
    with_module(|m| {
        let py = m.py();
        let locals = PyDict::new(py);
        locals.set_item("sf", m).unwrap();
        py.run(
            c"
p = sf.PhysicalParams(1.0, 1.0, 1.0, 1.0, 2.0)
g = sf.Grid(p, 20)
gains = sf.Gains(1.0, 3.0, 0.05, 0.03)
eq = sf.State.equilibrium(p, g)
assert sf.control_force(eq, p, gains, g) == 0.0
t = sf.simulate(eq, p, gains, g, 0.1)
assert t.completed and t.steps > 0
assert abs(sf.barrier_inv(sf.barrier(0.3, p), p) - 0.3) < 1e-12
plan = sf.plan_transfer(1.0, 0.05, p)
assert plan['T'] > 0
try:
    sf.Grid(p, 0)
    raise SystemExit('accepted N = 0')
except ValueError:
    pass
",
            None,
            Some(&locals),
        )
        .unwrap();
    });
}
