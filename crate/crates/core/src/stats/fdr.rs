// SPDX-License-Identifier: MIT OR Apache-2.0

/// Benjamini–Hochberg step-up adjustment.
///
/// `q_i = min_{j >= rank(i)} p_(j) * m / j`, capped at 1, returned in the
/// input order.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let adjusted = p_values[i] * m as f64 / (rank + 1) as f64;
        running = running.min(adjusted);
        // Rounding in p * m / m must not push q below p.
        q[i] = running.max(p_values[i]).min(1.0);
    }
    q
}
