//! Central finite differences against analytic gradients. The checker owns
//! no model knowledge: callers hand it flattened parameter matrices, the
//! matching analytic gradients, and a loss closure to re-evaluate.

use super::dense::DenseMatrix;

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Index into the parameter slice where the worst error lives.
    pub worst_param: usize,
    pub worst_entry: (usize, usize),
    pub entries_checked: usize,
}

/// For every parameter entry, compares the analytic gradient to
/// (loss(p+eps) - loss(p-eps)) / (2 eps). Relative error uses denominator
/// max(|fd|, 1e-8) so near-zero gradients do not divide by zero.
///
/// Parameters are restored to their original values before returning.
pub fn finite_diff_check<F>(
    params: &mut [DenseMatrix],
    analytic: &[DenseMatrix],
    mut loss: F,
    eps: f64,
) -> FdReport
where
    F: FnMut(&[DenseMatrix]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "parameter/gradient count mismatch");
    assert!(eps > 0.0);
    let mut report =
        FdReport { max_rel_err: 0.0, worst_param: 0, worst_entry: (0, 0), entries_checked: 0 };

    for p in 0..params.len() {
        let (rows, cols) = (params[p].rows(), params[p].cols());
        assert_eq!(
            (rows, cols),
            (analytic[p].rows(), analytic[p].cols()),
            "gradient shape mismatch at parameter {p}"
        );
        for r in 0..rows {
            for c in 0..cols {
                let orig = params[p].get(r, c);
                params[p].set(r, c, orig + eps);
                let up = loss(params);
                params[p].set(r, c, orig - eps);
                let down = loss(params);
                params[p].set(r, c, orig);

                let fd = (up - down) / (2.0 * eps);
                let ad = analytic[p].get(r, c);
                let rel = (ad - fd).abs() / fd.abs().max(1e-8);
                report.entries_checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_param = p;
                    report.worst_entry = (r, c);
                }
            }
        }
    }
    report
}
