use qigen_core::pack::PackedMatrix;

use crate::error::{Error, Result};

/// `y_j = sum_i x_i * s(i, j) * (code(i, j) - z(i, j))`, dequantizing every
/// weight and accumulating in `f64`.
pub fn qgemv_reference(pm: &PackedMatrix, x: &[f32]) -> Result<Vec<f32>> {
    let (n, m) = (pm.rows(), pm.cols());
    if x.len() != n {
        return Err(Error::Dimension { expected: n, actual: x.len() });
    }
    let codes = pm.to_code_matrix();
    let scales = pm.scales();
    let zeros = pm.zero_values();
    let g = pm.group_rows().max(1);
    let mut acc = vec![0f64; m];
    for (i, &xi) in x.iter().enumerate() {
        let params = (i / g) * m;
        let row = &codes.codes()[i * m..(i + 1) * m];
        for (j, a) in acc.iter_mut().enumerate() {
            let s = scales[params + j] as f64;
            let z = zeros[params + j] as f64;
            *a += xi as f64 * (s * (row[j] as f64 - z));
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}
