use rayon::prelude::*;

use super::{apply_update, mean_square, BatchOptions, BatchUpdate, Linearization};
use crate::cascade::{CascadeState, ReplicatedCascade};
use crate::error::{Error, Result};
use crate::numerics::{gram, matmul, Matrix};
use crate::package::{LayerBasis, LayerTrace};

/// Trains every output slice on its own column of `l_star`. The first
/// layer's kernel, `H` and `H·Hᵀ` depend only on the shared constellation and
/// are computed once; everything else is per slice. A failing slice keeps its
/// old state and reports its error without affecting the others.
pub fn train_batch_replicated(
    model: &mut ReplicatedCascade,
    x0: &Matrix,
    l_star: &Matrix,
    opts: &BatchOptions,
) -> Result<Vec<Result<BatchUpdate>>> {
    let s = model.n_slices();
    if l_star.shape() != (x0.rows(), s) {
        return Err(Error::dim(
            "train_batch_replicated",
            format!("targets are {:?}, expected {}x{s}", l_star.shape(), x0.rows()),
        ));
    }
    let first = &model.slices()[0];
    first.check_input(x0)?;
    let basis = first.layers()[0]
        .basis(x0, first.k_const())
        .map_err(|e| e.in_layer(1))?;
    let hh = gram(&basis.h).map_err(|e| e.in_layer(1))?;

    let results = model
        .slices_mut()
        .par_iter_mut()
        .enumerate()
        .map(|(j, slice)| {
            let target = l_star.select_cols(j, 1)?;
            slice_step(slice, &basis, &hh, &target, opts).map_err(|e| e.in_slice(j))
        })
        .collect();
    Ok(results)
}

fn slice_output(slice: &CascadeState, kernel: &Matrix) -> Result<Matrix> {
    let k = slice.k_const();
    let mut x = matmul(kernel, slice.layers()[0].lambda()).map_err(|e| e.in_layer(1))?;
    for (i, layer) in slice.layers().iter().enumerate().skip(1) {
        x = layer.evaluate(&x, k).map_err(|e| e.in_layer(i + 1))?;
    }
    Ok(x)
}

fn slice_step(
    slice: &mut CascadeState,
    basis: &LayerBasis,
    hh: &Matrix,
    target: &Matrix,
    opts: &BatchOptions,
) -> Result<BatchUpdate> {
    let k = *slice.k_const();
    let layers = slice.layers();
    let q = layers.len();
    let mut x = layers[0].output_from_basis(basis).map_err(|e| e.in_layer(1))?;
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(q - 1);
    for (i, layer) in layers.iter().enumerate().skip(1) {
        let (out, trace) = layer.forward(&x, &k).map_err(|e| e.in_layer(i + 1))?;
        traces.push(trace);
        x = out;
    }
    let delta_l = target.sub(&x)?;
    let residual_before = mean_square(&delta_l);

    let mut g = vec![Matrix::ones(target.rows(), 1)];
    for tau in (1..q).rev() {
        let next = layers[tau]
            .backward(&traces[tau - 1], &g[g.len() - 1])
            .map_err(|e| e.in_layer(tau + 1))?;
        g.push(next);
    }
    g.reverse();

    let mut h = vec![&basis.h];
    h.extend(traces.iter().map(|t| &t.h));
    let mut hh_cache = vec![None; q];
    hh_cache[0] = Some(hh);
    let lin = Linearization { h, g, hh: hh_cache };
    let (b_vec, delta_y) = lin.direction(&delta_l, opts)?;
    drop(lin);
    drop(traces);

    apply_update(slice, &delta_y)?;
    let residual_after = if opts.measure_after {
        Some(mean_square(&target.sub(&slice_output(slice, &basis.kernel)?)?))
    } else {
        None
    };
    Ok(BatchUpdate {
        b_vec,
        delta_y,
        residual_before,
        residual_after,
    })
}
