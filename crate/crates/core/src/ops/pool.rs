use super::FeatureMap;
use crate::error::{Error, Result};
use crate::graph::Adjacency;

fn check_neighborhoods(pool: &Adjacency, input: &FeatureMap) -> Result<()> {
    for (i, list) in pool.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::Structural(format!("pooling neighborhood {i} is empty")));
        }
        if list.iter().any(|&j| j as usize >= input.rows()) {
            return Err(Error::Structural(format!(
                "pooling neighborhood {i} references a missing vertex"
            )));
        }
    }
    Ok(())
}

/// Channel-wise max over each neighborhood; ties resolve to the lowest vertex
/// index. Returns the winning source vertex per output entry.
pub fn max_pool(pool: &Adjacency, input: &FeatureMap) -> Result<(FeatureMap, Vec<u32>)> {
    check_neighborhoods(pool, input)?;
    let cols = input.cols();
    let mut out = FeatureMap::zeros(pool.len(), cols);
    let mut argmax = vec![0u32; pool.len() * cols];
    for (i, list) in pool.iter().enumerate() {
        let o = out.row_mut(i);
        let arg = &mut argmax[i * cols..(i + 1) * cols];
        o.copy_from_slice(input.row(list[0] as usize));
        arg.fill(list[0]);
        for &j in &list[1..] {
            let a = input.row(j as usize);
            for c in 0..cols {
                if a[c] > o[c] || (a[c] == o[c] && j < arg[c]) {
                    o[c] = a[c];
                    arg[c] = j;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool_backward(argmax: &[u32], fine_rows: usize, grad_out: &FeatureMap) -> FeatureMap {
    let cols = grad_out.cols();
    let mut grad = FeatureMap::zeros(fine_rows, cols);
    for i in 0..grad_out.rows() {
        for c in 0..cols {
            let j = argmax[i * cols + c] as usize;
            let v = grad.get(j, c) + grad_out.get(i, c);
            grad.set(j, c, v);
        }
    }
    grad
}

pub fn avg_pool(pool: &Adjacency, input: &FeatureMap) -> Result<FeatureMap> {
    check_neighborhoods(pool, input)?;
    let mut out = FeatureMap::zeros(pool.len(), input.cols());
    for (i, list) in pool.iter().enumerate() {
        let o = out.row_mut(i);
        for &j in list {
            for (v, a) in o.iter_mut().zip(input.row(j as usize)) {
                *v += a;
            }
        }
        let inv = 1.0 / list.len() as f64;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

pub fn avg_pool_backward(pool: &Adjacency, fine_rows: usize, grad_out: &FeatureMap) -> FeatureMap {
    let mut grad = FeatureMap::zeros(fine_rows, grad_out.cols());
    for (i, list) in pool.iter().enumerate() {
        let inv = 1.0 / list.len() as f64;
        let g = grad_out.row(i);
        for &j in list {
            for (v, gv) in grad.row_mut(j as usize).iter_mut().zip(g) {
                *v += gv * inv;
            }
        }
    }
    grad
}

/// Max over all vertices, per channel (lowest index on ties).
pub fn global_max(input: &FeatureMap) -> Result<(FeatureMap, Vec<u32>)> {
    if input.rows() == 0 {
        return Err(Error::Structural("global max over zero vertices".into()));
    }
    let all: Vec<u32> = (0..input.rows() as u32).collect();
    max_pool(&Adjacency::from_lists(&[all]), input)
}

pub fn global_max_backward(argmax: &[u32], rows: usize, grad_out: &FeatureMap) -> FeatureMap {
    max_pool_backward(argmax, rows, grad_out)
}
