use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transformer::{cls_head_outputs, HeadMask, Model};

/// Default ridge: `1e-6 · trace(Σ) / d_k` is added to the covariance diagonal.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadDistance {
    pub head: usize,
    pub euclidean: f64,
    pub mahalanobis: f64,
}

/// Distances between ID and OOD centroids of each surviving head's
/// classification-token output at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGeometryReport {
    pub layer: usize,
    pub heads: Vec<HeadDistance>,
    pub mean_euclidean: f64,
    pub mean_mahalanobis: f64,
    pub warnings: Vec<String>,
}

fn centroid(v: &[Vec<f64>]) -> DVector<f64> {
    let dim = v[0].len();
    let mut c = DVector::zeros(dim);
    for x in v {
        c += DVector::from_column_slice(x);
    }
    c / v.len() as f64
}

/// `(‖c_id − c_ood‖, √((c_id − c_ood)ᵀ (Σ_id + λI)⁻¹ (c_id − c_ood)))` with
/// `Σ_id` the unbiased ID covariance and `λ = ridge_scale · trace(Σ_id) / dim`.
pub fn centroid_distances(
    id: &[Vec<f64>],
    ood: &[Vec<f64>],
    ridge_scale: f64,
) -> Result<(f64, f64)> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract(
            "uq-metrics",
            "geometry needs ID and OOD vectors",
        ));
    }
    let dim = id[0].len();
    if dim == 0 || id.iter().chain(ood).any(|x| x.len() != dim) {
        return Err(Error::contract("uq-metrics", "ragged geometry vectors"));
    }
    let c_id = centroid(id);
    let diff = &c_id - centroid(ood);
    let euclidean = diff.norm();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for x in id {
        let r = DVector::from_column_slice(x) - &c_id;
        cov.ger(1.0, &r, &r, 1.0);
    }
    cov /= (id.len().max(2) - 1) as f64;
    let ridge = ridge_scale * cov.trace() / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::contract("uq-metrics", "ID covariance is singular after ridge"))?;
    let solved = chol.solve(&diff);
    let mahalanobis = diff.dot(&solved).max(0.0).sqrt();
    Ok((euclidean, mahalanobis))
}

fn collect<S: Scalar>(
    model: &Model<S>,
    mask: &HeadMask,
    data: &[Sample],
    layer: usize,
) -> Result<Vec<Vec<(usize, Vec<f64>)>>> {
    data.par_iter()
        .map(|s| {
            Ok(cls_head_outputs(model, &s.tokens, mask, layer)?
                .into_iter()
                .map(|(h, z)| (h, z.into_iter().map(|x| x.to_f64_lossy()).collect()))
                .collect())
        })
        .collect()
}

pub fn head_geometry<S: Scalar>(
    model: &Model<S>,
    mask: &HeadMask,
    id: &[Sample],
    ood: &[Sample],
    layer: usize,
    ridge_scale: f64,
) -> Result<HeadGeometryReport> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract(
            "uq-metrics",
            "geometry needs ID and OOD samples",
        ));
    }
    let id_z = collect(model, mask, id, layer)?;
    let ood_z = collect(model, mask, ood, layer)?;
    let d_k = model.config.head_dim();
    let mut warnings = Vec::new();
    if id.len() < d_k + 1 {
        warnings.push(format!(
            "{} ID samples for head dimension {d_k}: covariance is rank-deficient",
            id.len()
        ));
    }
    let heads = mask
        .survivors(layer)
        .into_iter()
        .enumerate()
        .map(|(slot, head)| {
            let pick = |z: &[Vec<(usize, Vec<f64>)>]| -> Vec<Vec<f64>> {
                z.iter().map(|row| row[slot].1.clone()).collect()
            };
            let (euclidean, mahalanobis) =
                centroid_distances(&pick(&id_z), &pick(&ood_z), ridge_scale)?;
            Ok(HeadDistance {
                head,
                euclidean,
                mahalanobis,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = heads.len() as f64;
    Ok(HeadGeometryReport {
        layer,
        mean_euclidean: heads.iter().map(|h| h.euclidean).sum::<f64>() / n,
        mean_mahalanobis: heads.iter().map(|h| h.mahalanobis).sum::<f64>() / n,
        heads,
        warnings,
    })
}

impl HeadGeometryReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# geometry layer={}\nhead\teuclidean\tmahalanobis\n",
            self.layer
        );
        for h in &self.heads {
            out.push_str(&format!("{}\t{}\t{}\n", h.head, h.euclidean, h.mahalanobis));
        }
        out.push_str(&format!(
            "mean\t{}\t{}\n",
            self.mean_euclidean, self.mean_mahalanobis
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance_unit_offset() {
        // Four ID points at ±e1, ±e2 scaled so the unbiased covariance is I.
        let s = (1.5f64).sqrt();
        let id = vec![vec![s, 0.0], vec![-s, 0.0], vec![0.0, s], vec![0.0, -s]];
        let ood = vec![vec![1.0, 0.0]];
        let (e, m) = centroid_distances(&id, &ood, 0.0).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let id = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]];
        let (e, m) = centroid_distances(&id, &id, DEFAULT_RIDGE_SCALE).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn singular_covariance_without_ridge_fails() {
        let id = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let ood = vec![vec![0.0, 1.0]];
        assert!(centroid_distances(&id, &ood, 0.0).is_err());
        assert!(centroid_distances(&id, &ood, DEFAULT_RIDGE_SCALE).is_ok());
    }
}
