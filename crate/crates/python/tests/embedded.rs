use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_runs_in_embedded_interpreter() {
    Python::initialize();
    Python::attach(|py| {
        let module = PyModule::new(py, "selfseg_py").unwrap();
        selfseg_py::selfseg_py(&module).unwrap();
        py.import("sys")
            .unwrap()
            .getattr("modules")
            .unwrap()
            .set_item("selfseg_py", module)
            .unwrap();
        let locals = PyDict::new(py);
        py.run(
            c"
import selfseg_py as ss
v = ss.Vocab(['a', 'b', 'ab'])
segs = v.enumerate('ab')
m = ss.Model(v, '{\"model_dim\": 4, \"ff_dim\": 8, \"heads\": 2, \"enc_layers\": 1, \"dec_layers\": 1}')
best = m.segment('abab')
lm = m.log_marginal('ab')
bad = False
try:
    m.segment('abz')
except ValueError:
    bad = True
",
            None,
            Some(&locals),
        )
        .unwrap();
        let segs: Vec<Vec<String>> = locals.get_item("segs").unwrap().unwrap().extract().unwrap();
        assert_eq!(segs, vec![vec!["ab".to_string()], vec!["a".into(), "b".into()]]);
        let best: Vec<String> = locals.get_item("best").unwrap().unwrap().extract().unwrap();
        assert_eq!(best.concat(), "abab");
        let lm: f64 = locals.get_item("lm").unwrap().unwrap().extract().unwrap();
        assert!(lm < 0.0);
        let bad: bool = locals.get_item("bad").unwrap().unwrap().extract().unwrap();
        assert!(bad);
    });
}
