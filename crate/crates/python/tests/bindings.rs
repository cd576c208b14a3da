//! Exercises the bindings through a real interpreter: the module is built
//! in-process, injected as a local, and driven from Python snippets.

use std::ffi::CStr;

use pyo3::prelude::*;
use pyo3::types::{IntoPyDict, PyDict};

fn run_py(code: &CStr) {
    Python::attach(|py| {
        let m = PyModule::new(py, "randsel_py").unwrap();
        randsel_py::register(&m).unwrap();
        let locals: Bound<'_, PyDict> = [("rs", &m)].into_py_dict(py).unwrap();
        if let Err(e) = py.run(code, None, Some(&locals)) {
            e.print(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn dataset_generators_and_accessors() {
    run_py(c"
data = rs.Dataset.gen_xor(40, 6, noise_sd=0.3, seed=1)
assert data.m == 40 and data.n_features == 6
x = data.x()
assert len(x) == 40 and all(len(row) == 6 for row in x)
assert set(data.y()) == {-1.0, 1.0}
assert data.relevant() == [0, 1]
assert 'Dataset' in repr(data)

lin = rs.Dataset.gen_weston_linear(30, 8, seed=2)
assert lin.relevant() == [0, 1, 2, 3, 4]
shell = rs.Dataset.gen_weston_nonlinear(30, 8, seed=2)
assert shell.m == 30
");
}

#[test]
fn dataset_constructor_and_errors() {
    run_py(c"
data = rs.Dataset([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0]], [1.0, -1.0, 1.0, -1.0])
assert data.m == 4 and data.n_features == 2
assert data.relevant() is None

try:
    rs.Dataset([[0.0, 1.0], [1.0]], [1.0, -1.0])
    raise SystemExit('ragged matrix accepted')
except ValueError:
    pass

try:
    rs.Dataset([[0.0], [1.0]], [1.0, 2.0])
    raise SystemExit('bad label accepted')
except ValueError:
    pass

try:
    rs.Dataset.load_csv('/nonexistent/file.csv')
    raise SystemExit('missing file accepted')
except OSError:
    pass
");
}

#[test]
fn csv_roundtrip() {
    run_py(c"
import tempfile, os
data = rs.Dataset.gen_xor(30, 4, seed=5)
with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, 'data.csv')
    data.save_csv(path)
    back = rs.Dataset.load_csv(path)
    assert back.m == data.m and back.n_features == data.n_features
    assert back.y() == data.y()
    assert back.relevant() == data.relevant()
");
}

#[test]
fn selector_runs_and_is_deterministic() {
    run_py(c"
data = rs.Dataset.gen_xor(80, 6, seed=1)
cfg = rs.SelectorConfig(n_bootstraps=150, subsample=20, master_seed=3)
trace = rs.select(data, cfg)
assert sorted(trace.selected) == trace.selected
assert set(trace.selected) <= set(range(6))
its = trace.iterations()
assert len(its) >= 1
assert all(it.kernel_evals == 2 * 150 * 20 * 20 for it in its)
assert trace.total_kernel_evals == sum(it.kernel_evals for it in its)
first = its[0]
assert first.active_before == list(range(6))
assert len(first.contributions) == 6
assert 'SelectionTrace' in repr(trace)

again = rs.select(data, rs.SelectorConfig(n_bootstraps=150, subsample=20, master_seed=3))
assert again.to_jsonl() == trace.to_jsonl()

try:
    rs.SelectorConfig(cull_fraction=1.5)
    raise SystemExit('bad cull fraction accepted')
except ValueError:
    pass
");
}

#[test]
fn contribution_estimates() {
    run_py(c"
data = rs.Dataset.gen_xor(60, 5, seed=7)
rows = rs.estimate_contributions(data, n_draws=300, subsample=20, seed=9)
assert [r[0] for r in rows] == list(range(5))
assert all(not r[4] for r in rows)
again = rs.estimate_contributions(data, n_draws=300, subsample=20, seed=9)
assert again == rows

sub = rs.estimate_contributions(data, n_draws=50, subsample=15, active=[0, 2, 4], seed=9)
assert [r[0] for r in sub] == [0, 2, 4]
");
}

#[test]
fn baseline_rankings() {
    run_py(c"
data = rs.Dataset.gen_weston_linear(50, 7, seed=3)
for ranking in (rs.corr_filter(data), rs.fohsic(data), rs.bahsic(data), rs.fohsic(data, gamma=0.5)):
    assert sorted(r[0] for r in ranking) == list(range(7))
# The strongest linear feature dominates a correlation ranking.
assert rs.corr_filter(data)[0][0] in (0, 1, 2, 3, 4)
");
}

#[test]
fn alignment_and_bandwidth() {
    run_py(c"
data = rs.Dataset.gen_xor(50, 4, seed=2)
a = rs.subset_alignment(data, [0, 1])
assert -1.0 <= a <= 1.0
noise = rs.subset_alignment(data, [2, 3])
assert a > noise
assert rs.median_gamma(data) > 0.0

try:
    rs.subset_alignment(data, [])
    raise SystemExit('empty subset accepted')
except ValueError:
    pass
");
}

#[test]
fn kernel_classifier() {
    run_py(c"
x = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]]
y = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]
clf = rs.KernelClassifier.train(x, y, gamma=1.0)
assert clf.predict(x) == y
scores = clf.decision_function(x)
assert all((s < 0) == (label < 0) for s, label in zip(scores, y))

try:
    rs.KernelClassifier.train(x, y, gamma=-1.0)
    raise SystemExit('bad gamma accepted')
except ValueError:
    pass

try:
    rs.KernelClassifier.train(x, [1.0] * 6, gamma=1.0)
    raise SystemExit('single-class labels accepted')
except ValueError:
    pass
");
}
