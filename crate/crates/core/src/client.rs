//! Client-side state: one local dataset and the gradient, loss and Gram
//! products the coordinator asks for. Raw rows never leave this module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::smoothloss::{smooth_abs_grad, smoothed_local_loss, validate_tau, SmoothingParam};
use crate::transport::RoundMessage;

/// Local design matrix (rows are samples, last column all ones) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    client_id: u32,
    features: DMatrix<f64>,
    responses: DVector<f64>,
}

impl ClientDataset {
    /// Builds a dataset from an augmented design matrix whose last column must be ones.
    pub fn new(client_id: u32, features: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::config("design matrix needs at least the ones column"));
        }
        if features.nrows() != responses.len() {
            return Err(Error::config(format!(
                "client {client_id}: {} feature rows but {} responses",
                features.nrows(),
                responses.len()
            )));
        }
        if features.iter().chain(responses.iter()).any(|x| !x.is_finite()) {
            return Err(Error::config(format!("client {client_id}: non-finite data")));
        }
        let last = features.ncols() - 1;
        if features.column(last).iter().any(|&x| x != 1.0) {
            return Err(Error::config(format!(
                "client {client_id}: last design column must be all ones"
            )));
        }
        Ok(ClientDataset {
            client_id,
            features,
            responses,
        })
    }

    /// Builds a dataset from raw rows, appending the ones column.
    pub fn from_rows(client_id: u32, rows: &[Vec<f64>], responses: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::config("ragged feature rows"));
        }
        let m = rows.len();
        let features = DMatrix::from_fn(m, p + 1, |i, j| if j == p { 1.0 } else { rows[i][j] });
        Self::new(client_id, features, DVector::from_column_slice(responses))
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn with_id(mut self, client_id: u32) -> Self {
        self.client_id = client_id;
        self
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Number of regression features P (excluding the ones column).
    pub fn n_features(&self) -> usize {
        self.features.ncols() - 1
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    /// Stacks datasets row-wise under a new id.
    pub fn pooled(client_id: u32, parts: &[ClientDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("cannot pool zero datasets"))?;
        let cols = first.features.ncols();
        if parts.iter().any(|d| d.features.ncols() != cols) {
            return Err(Error::config("cannot pool datasets of different widths"));
        }
        let rows: usize = parts.iter().map(|d| d.n_samples()).sum();
        let mut features = DMatrix::zeros(rows, cols);
        let mut responses = DVector::zeros(rows);
        let mut at = 0;
        for d in parts {
            let m = d.n_samples();
            features.rows_mut(at, m).copy_from(&d.features);
            responses.rows_mut(at, m).copy_from(&d.responses);
            at += m;
        }
        Self::new(client_id, features, responses)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.features.ncols() {
            return Err(Error::protocol(format!(
                "client {}: expected vector of length {}, got {len}",
                self.client_id,
                self.features.ncols()
            )));
        }
        Ok(())
    }

    /// `y - X w`.
    pub fn residuals(&self, w: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(w.len())?;
        let w = DVector::from_column_slice(w);
        Ok(&self.responses - &self.features * w)
    }

    /// Gradient of the smoothed local loss with respect to `w`.
    pub fn local_gradient(&self, w: &[f64], mu: SmoothingParam, tau: f64) -> Result<Vec<f64>> {
        validate_tau(tau)?;
        let z = self.residuals(w)?;
        let weights = z.map(|zi| -(0.5 * smooth_abs_grad(zi, mu) + (tau - 0.5)));
        Ok(self.features.tr_mul(&weights).as_slice().to_vec())
    }

    pub fn local_loss(&self, w: &[f64], mu: SmoothingParam, tau: f64) -> Result<f64> {
        validate_tau(tau)?;
        let z = self.residuals(w)?;
        Ok(smoothed_local_loss(z.as_slice(), tau, mu))
    }

    /// Unsmoothed check-loss subgradient, taking `sign(0) = 0`.
    pub fn check_loss_subgradient(&self, w: &[f64], tau: f64) -> Result<Vec<f64>> {
        validate_tau(tau)?;
        let z = self.residuals(w)?;
        let weights = z.map(|zi| {
            let s = if zi > 0.0 {
                1.0
            } else if zi < 0.0 {
                -1.0
            } else {
                0.0
            };
            -(0.5 * s + (tau - 0.5))
        });
        Ok(self.features.tr_mul(&weights).as_slice().to_vec())
    }

    /// `X^T (X v)` without forming the Gram matrix.
    pub fn gram_vector_product(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        let xv = &self.features * DVector::from_column_slice(v);
        Ok(self.features.tr_mul(&xv).as_slice().to_vec())
    }
}

/// Answers coordinator requests for one dataset.
#[derive(Debug, Clone)]
pub struct ClientNode {
    data: ClientDataset,
}

impl ClientNode {
    pub fn new(data: ClientDataset) -> Self {
        ClientNode { data }
    }

    pub fn id(&self) -> u32 {
        self.data.client_id
    }

    pub fn dataset(&self) -> &ClientDataset {
        &self.data
    }

    pub fn hello(&self) -> RoundMessage {
        RoundMessage::Hello {
            client_id: self.data.client_id,
            n_samples: self.data.n_samples() as u64,
            n_features: self.data.n_features() as u64,
        }
    }

    /// Responds to one request. `Shutdown` and `FinalModel` produce no reply.
    ///
    /// A gradient request with `mu == 0` asks for the unsmoothed check-loss
    /// subgradient and loss.
    pub fn handle(&self, msg: &RoundMessage) -> Result<Option<RoundMessage>> {
        match msg {
            RoundMessage::GradRequest { k, w, mu, tau } => {
                let (gradient, local_loss) = if *mu != 0.0 {
                    let mu = SmoothingParam::new(*mu)?;
                    (
                        self.data.local_gradient(w, mu, *tau)?,
                        self.data.local_loss(w, mu, *tau)?,
                    )
                } else {
                    let z = self.data.residuals(w)?;
                    (
                        self.data.check_loss_subgradient(w, *tau)?,
                        crate::smoothloss::check_loss_sum(z.as_slice(), *tau),
                    )
                };
                Ok(Some(RoundMessage::GradResponse {
                    client_id: self.data.client_id,
                    k: *k,
                    gradient,
                    local_loss,
                }))
            }
            RoundMessage::GramVecRequest { round, v } => Ok(Some(RoundMessage::GramVecResponse {
                client_id: self.data.client_id,
                round: *round,
                product: self.data.gram_vector_product(v)?,
            })),
            RoundMessage::FinalModel { .. } | RoundMessage::Shutdown => Ok(None),
            other => Err(Error::protocol(format!(
                "client {} cannot handle {}",
                self.data.client_id,
                other.kind()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mu(m: f64) -> SmoothingParam {
        SmoothingParam::new(m).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, m: usize, p: usize) -> ClientDataset {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        ClientDataset::from_rows(0, &rows, &y).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 0.5]);
        assert!(ClientDataset::new(0, x, DVector::from_vec(vec![1.0, 2.0])).is_err());
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 1.0]);
        assert!(ClientDataset::new(0, x.clone(), DVector::from_vec(vec![1.0])).is_err());
        let d = ClientDataset::new(0, x, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(d.local_gradient(&[1.0], mu(1.0), 0.5), Err(Error::Protocol(_))));
        assert!(matches!(d.gram_vector_product(&[1.0, 2.0, 3.0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn gradient_at_exact_fit() {
        let rows = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, -2.0]];
        let w = [0.5, -1.0, 0.25];
        let y: Vec<f64> = rows.iter().map(|r| r[0] * w[0] + r[1] * w[1] + w[2]).collect();
        let d = ClientDataset::from_rows(0, &rows, &y).unwrap();
        let g = d.local_gradient(&w, mu(0.3), 0.5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        let g = d.local_gradient(&w, mu(0.3), 0.7).unwrap();
        let col_sums = [3.0, 0.5, 3.0];
        for (gi, s) in g.iter().zip(col_sums) {
            assert!((gi + 0.2 * s).abs() < 1e-12);
        }
        let loss = d.local_loss(&w, mu(0.3), 0.5).unwrap();
        assert!((loss - 3.0 * 0.3 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = random_dataset(&mut rng, 10, 5);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = d.local_gradient(&w, mu(0.5), 0.7).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (d.local_loss(&wp, mu(0.5), 0.7).unwrap()
                - d.local_loss(&wm, mu(0.5), 0.7).unwrap())
                / (2.0 * h);
            assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn loss_dominates_check_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_dataset(&mut rng, 12, 3);
        let w = [0.1, -0.2, 0.3, 0.0];
        let z = d.residuals(&w).unwrap();
        let exact = crate::smoothloss::check_loss_sum(z.as_slice(), 0.55);
        assert!(d.local_loss(&w, mu(0.8), 0.55).unwrap() >= exact);
        let big = z.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        assert_eq!(d.local_loss(&w, mu(big), 0.55).unwrap(), exact);
    }

    #[test]
    fn gram_product_matches_dense() {
        assert_eq!(
            ClientDataset::new(0, DMatrix::identity(3, 3), DVector::zeros(3))
                .err()
                .is_some(),
            true
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_dataset(&mut rng, 6, 2);
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gram = d.features().transpose() * d.features();
        let dense = gram * DVector::from_column_slice(&v);
        let got = d.gram_vector_product(&v).unwrap();
        for (a, b) in got.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(d.gram_vector_product(&[0.0; 3]).unwrap().iter().all(|&x| x == 0.0));
        let quad: f64 = got.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(quad >= 0.0);
    }

    #[test]
    fn handle_rejects_coordinator_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let node = ClientNode::new(random_dataset(&mut rng, 3, 2));
        assert!(node.handle(&node.hello()).is_err());
        assert!(node.handle(&RoundMessage::Shutdown).unwrap().is_none());
    }
}
