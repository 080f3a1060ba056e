use pyo3::prelude::*;

#[pymodule]
fn qcdlab(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
