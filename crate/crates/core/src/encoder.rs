//! Embedding tables and average pooling of feature embeddings into initial
//! user and item representations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::NodeFeatures;
use crate::error::{GcmError, Result};
use crate::linalg::{add_assign, Matrix};

/// One row per feature of a field group, `dim` columns.
pub type EmbeddingTable = Matrix;

/// Feature counts of the three field groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub user: usize,
    pub item: usize,
    pub context: usize,
}

impl From<&NodeFeatures> for VocabSizes {
    fn from(f: &NodeFeatures) -> Self {
        VocabSizes {
            user: f.n_user_features,
            item: f.n_item_features,
            context: f.n_context_features,
        }
    }
}

/// The trainable embedding tables of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    pub user: EmbeddingTable,
    pub item: EmbeddingTable,
    pub context: EmbeddingTable,
}

impl EmbeddingTables {
    pub fn zeros(sizes: VocabSizes, dim: usize) -> Self {
        EmbeddingTables {
            user: Matrix::zeros(sizes.user, dim),
            item: Matrix::zeros(sizes.item, dim),
            context: Matrix::zeros(sizes.context, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.user.cols()
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            user: self.user.rows(),
            item: self.item.rows(),
            context: self.context.rows(),
        }
    }
}

/// I.i.d. `N(0, scale²)` entries; user, item, then context table drawn from
/// one ChaCha stream seeded with `seed`.
pub fn init_embeddings(sizes: VocabSizes, dim: usize, seed: u64, scale: f64) -> Result<EmbeddingTables> {
    if dim == 0 {
        return Err(GcmError::param("embedding dimension must be at least 1"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GcmError::param(format!("init scale must be positive, got {scale}")));
    }
    let normal = Normal::new(0.0, scale).map_err(|e| GcmError::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |rows: usize| {
        let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, dim, data).expect("shape")
    };
    Ok(EmbeddingTables {
        user: table(sizes.user),
        item: table(sizes.item),
        context: table(sizes.context),
    })
}

fn check_ids(ids: &[u32], table: &EmbeddingTable) -> Result<()> {
    for (k, &id) in ids.iter().enumerate() {
        if id as usize >= table.rows() {
            return Err(GcmError::contract(format!(
                "feature id {id} out of range for table with {} rows",
                table.rows()
            )));
        }
        if ids[..k].contains(&id) {
            return Err(GcmError::contract(format!(
                "duplicate feature id {id}; multi-hot inputs hold each feature at most once"
            )));
        }
    }
    Ok(())
}

fn mean_rows(ids: &[u32], table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.cols()];
    for &id in ids {
        add_assign(&mut acc, table.row(id as usize));
    }
    let inv = 1.0 / ids.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// Mean of the selected rows. The list must be non-empty and duplicate-free.
pub fn pool_field(ids: &[u32], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(GcmError::contract("cannot pool an empty feature list"));
    }
    check_ids(ids, table)?;
    Ok(mean_rows(ids, table))
}

/// Like [`pool_field`], except an empty list pools to the zero vector.
pub fn pool_context(ids: &[u32], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Ok(vec![0.0; table.cols()]);
    }
    check_ids(ids, table)?;
    Ok(mean_rows(ids, table))
}

/// Initial user and item representations, before any propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub users: Matrix,
    pub items: Matrix,
}

impl NodeEmbeddings {
    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        NodeEmbeddings {
            users: Matrix::zeros(n_users, dim),
            items: Matrix::zeros(n_items, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }
}

/// Pools every user's and item's feature embeddings.
pub fn encode_all(features: &NodeFeatures, tables: &EmbeddingTables) -> Result<NodeEmbeddings> {
    let pool_all = |lists: &[Vec<u32>], table: &EmbeddingTable| -> Result<Matrix> {
        let mut out = Matrix::zeros(lists.len(), table.cols());
        for (n, ids) in lists.iter().enumerate() {
            let v = pool_field(ids, table)?;
            out.row_mut(n).copy_from_slice(&v);
        }
        Ok(out)
    };
    Ok(NodeEmbeddings {
        users: pool_all(&features.users, &tables.user)?,
        items: pool_all(&features.items, &tables.item)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> EmbeddingTable {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Matrix::from_rows(&v, rows[0].len()).unwrap()
    }

    #[test]
    fn pool_two_rows() {
        let t = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(pool_field(&[0, 1], &t).unwrap(), vec![0.5, 0.5]);
        assert_eq!(pool_field(&[1], &t).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn pool_rejects_duplicates_and_empty() {
        let t = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(pool_field(&[0, 0], &t), Err(GcmError::Contract(_))));
        assert!(matches!(pool_field(&[], &t), Err(GcmError::Contract(_))));
        assert!(matches!(pool_field(&[2], &t), Err(GcmError::Contract(_))));
    }

    #[test]
    fn context_pooling() {
        let t = table(&[&[2.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(pool_context(&[0], &t).unwrap(), vec![2.0, 0.0]);
        assert_eq!(pool_context(&[0, 1], &t).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pool_context(&[], &t).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let sizes = VocabSizes {
            user: 100,
            item: 60,
            context: 10,
        };
        let a = init_embeddings(sizes, 64, 11, 0.01).unwrap();
        let b = init_embeddings(sizes, 64, 11, 0.01).unwrap();
        assert_eq!(a, b);
        // 170 × 64 = 10880 samples
        let all: Vec<f64> = [&a.user, &a.item, &a.context]
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.01).abs() < 0.002, "sd = {sd}");
        assert!(init_embeddings(sizes, 0, 1, 0.01).is_err());
        assert!(init_embeddings(sizes, 4, 1, 0.0).is_err());
    }

    #[test]
    fn encode_locality() {
        let features = NodeFeatures {
            users: vec![vec![0], vec![1, 2]],
            items: vec![vec![0]],
            n_user_features: 3,
            n_item_features: 1,
            n_context_features: 0,
        };
        let sizes = VocabSizes::from(&features);
        let mut tables = init_embeddings(sizes, 3, 5, 1.0).unwrap();
        let before = encode_all(&features, &tables).unwrap();
        assert_eq!(before.users.row(0), tables.user.row(0));
        tables.user.row_mut(2)[1] += 1.0;
        let after = encode_all(&features, &tables).unwrap();
        assert_eq!(after.users.row(0), before.users.row(0));
        assert_ne!(after.users.row(1), before.users.row(1));

        let zero = encode_all(&features, &EmbeddingTables::zeros(sizes, 3)).unwrap();
        assert!(zero.users.as_slice().iter().all(|&v| v == 0.0));
    }
}
