//! The AllPairs objective, its grouped cross-entropy form, and analytic
//! gradients.

use crate::error::{Error, Result};
use crate::harvest::{GroupedCounts, HarvestDataset, HarvestRecord};

use super::{ForwardBuffers, Model};

/// Clamp a unit-interval output to `[eps, 1 - eps]`. Returns the clamped
/// value and whether clamping fired (saturated outputs get zero gradient).
#[inline]
fn clamp_unit(v: f64, eps: f64) -> (f64, bool) {
    if v < eps {
        (eps, true)
    } else if v > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (v, false)
    }
}

/// Record indices grouped by context id, preserving record order.
pub(crate) fn group_records_by_context(data: &HarvestDataset) -> Vec<Vec<u32>> {
    let mut groups = vec![Vec::new(); data.contexts.len()];
    for (i, r) in data.records.iter().enumerate() {
        groups[r.context_id as usize].push(i as u32);
    }
    groups
}

/// Sum the objective terms of `records` given forward outputs in `buf`,
/// optionally accumulating output-space gradients into `d_h` / `d_g`.
fn accumulate_records<'a>(
    records: impl Iterator<Item = &'a HarvestRecord>,
    buf: &ForwardBuffers,
    k_max: usize,
    clamp: f64,
    mut output_grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        let k = r.position;
        let h_raw = buf.h[k - 1];
        if h_raw.is_nan() {
            return Err(Error::numeric(format!(
                "propensity output is NaN at context {} position {}",
                r.context_id, k
            )));
        }
        let (h, h_clamped) = clamp_unit(h_raw, clamp);
        for k_prime in r.attainable.positions() {
            if k_prime == k {
                continue;
            }
            let g_raw = buf.g[(k - 1) * k_max + (k_prime - 1)];
            if g_raw.is_nan() {
                return Err(Error::numeric(format!(
                    "relevance output is NaN at context {} pair ({}, {})",
                    r.context_id, k, k_prime
                )));
            }
            let (g, g_clamped) = clamp_unit(g_raw, clamp);
            let y = h * g;
            let d_y = if r.clicked {
                total += r.ips_weight * y.ln();
                r.ips_weight / y
            } else {
                total += r.ips_weight * (1.0 - y).ln();
                -r.ips_weight / (1.0 - y)
            };
            if let Some((d_h, d_g)) = output_grads.as_mut() {
                if !h_clamped {
                    d_h[k - 1] += d_y * g;
                }
                if !g_clamped {
                    d_g[(k - 1) * k_max + (k_prime - 1)] += d_y * h;
                }
            }
        }
    }
    Ok(total)
}

/// Objective and (optionally) parameter gradient in one pass.
pub(crate) fn objective_core(
    data: &HarvestDataset,
    groups: &[Vec<u32>],
    model: &Model,
    clamp: f64,
    mut grad: Option<&mut [f64]>,
    buf: &mut ForwardBuffers,
) -> Result<f64> {
    if let Some(g) = grad.as_mut() {
        g.fill(0.0);
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let k_max = data.k_max;
    let mut d_h = vec![0.0; k_max];
    let mut d_g = vec![0.0; k_max * k_max];
    let mut total = 0.0;

    if model.context_dim() == 0 {
        // Context-free model: one forward pass covers every record.
        model.forward(&[], buf);
        let value = accumulate_records(
            data.records.iter(),
            buf,
            k_max,
            clamp,
            grad.as_mut().map(|_| (&mut d_h[..], &mut d_g[..])),
        )?;
        total += value;
        if let Some(g) = grad.as_mut() {
            model.backprop(&[], buf, &d_h, &d_g, g);
        }
    } else {
        for (context_id, records) in groups.iter().enumerate() {
            if records.is_empty() {
                continue;
            }
            let x = &data.contexts[context_id];
            model.forward(x, buf);
            if grad.is_some() {
                d_h.fill(0.0);
                d_g.fill(0.0);
            }
            let value = accumulate_records(
                records.iter().map(|&i| &data.records[i as usize]),
                buf,
                k_max,
                clamp,
                grad.as_mut().map(|_| (&mut d_h[..], &mut d_g[..])),
            )?;
            total += value;
            if let Some(g) = grad.as_mut() {
                model.backprop(x, buf, &d_h, &d_g, g);
            }
        }
    }
    if total.is_nan() {
        return Err(Error::numeric("objective evaluated to NaN"));
    }
    Ok(total)
}

/// Evaluate the AllPairs objective over all materialized label entries.
///
/// `h` and `g` outputs are clamped to `[clamp, 1 - clamp]` before the
/// product and the logs. Empty datasets score 0.
pub fn allpairs_objective(data: &HarvestDataset, model: &Model, clamp: f64) -> Result<f64> {
    check_dims(data, model)?;
    let groups = group_records_by_context(data);
    let mut buf = ForwardBuffers::default();
    objective_core(data, &groups, model, clamp, None, &mut buf)
}

/// Analytic gradient of [`allpairs_objective`] with respect to every model
/// parameter. Clamped outputs contribute zero gradient.
pub fn objective_gradient(data: &HarvestDataset, model: &Model, clamp: f64) -> Result<Vec<f64>> {
    check_dims(data, model)?;
    let groups = group_records_by_context(data);
    let mut buf = ForwardBuffers::default();
    let mut grad = vec![0.0; model.params().len()];
    objective_core(data, &groups, model, clamp, Some(&mut grad), &mut buf)?;
    Ok(grad)
}

fn check_dims(data: &HarvestDataset, model: &Model) -> Result<()> {
    if data.is_empty() {
        return Ok(());
    }
    if model.k_max() < data.k_max {
        return Err(Error::input(format!(
            "model covers {} positions, dataset has k_max {}",
            model.k_max(),
            data.k_max
        )));
    }
    let dim = model.context_dim();
    if dim > 0 && data.context_dim() != dim {
        return Err(Error::input(format!(
            "model expects context dimension {}, dataset has {}",
            dim,
            data.context_dim()
        )));
    }
    Ok(())
}

/// The grouped (weighted cross-entropy) form of the objective:
///
/// ```text
/// sum_x sum_{k != k'} N_hat[k,k'](x) * ( y_hat * log y + not_y_hat * log(1 - y) )
/// ```
///
/// with `y = h(k,x) g(k,k',x)`. Equal to [`allpairs_objective`] on the
/// grouping of the same dataset; used as an independent evaluation route.
pub fn cross_entropy_form(grouped: &GroupedCounts, model: &Model, clamp: f64) -> Result<f64> {
    let k_max = model.k_max();
    let mut buf = ForwardBuffers::default();
    let mut current_bucket = usize::MAX;
    let mut total = 0.0;

    for (&(bucket, k, k_prime), cell) in &grouped.cells {
        if bucket != current_bucket {
            let x = &grouped.buckets[bucket];
            if model.context_dim() > 0 && x.len() != model.context_dim() {
                return Err(Error::input(format!(
                    "bucket context dimension {} does not match model ({})",
                    x.len(),
                    model.context_dim()
                )));
            }
            model.forward(x, &mut buf);
            current_bucket = bucket;
        }
        if k > k_max || k_prime > k_max {
            return Err(Error::input(format!(
                "grouped pair ({k}, {k_prime}) exceeds model k_max {k_max}"
            )));
        }
        let (h, _) = clamp_unit(buf.h[k - 1], clamp);
        let (g, _) = clamp_unit(buf.g[(k - 1) * k_max + (k_prime - 1)], clamp);
        if h.is_nan() || g.is_nan() {
            return Err(Error::numeric("model output is NaN in cross_entropy_form"));
        }
        let y = h * g;
        total += cell.n_hat as f64 * (cell.y_hat * y.ln() + cell.not_y_hat * (1.0 - y).ln());
    }
    if total.is_nan() {
        return Err(Error::numeric("cross-entropy form evaluated to NaN"));
    }
    Ok(total)
}
