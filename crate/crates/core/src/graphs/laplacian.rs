use super::WeightMatrix;
use crate::error::Result;
use crate::tensor::Tensor;

/// Normalized Laplacian of one graph plus its degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianSet {
    pub laplacian: Tensor,
    pub degree: Vec<f64>,
}

/// `L = I - D^{-1/2} E D^{-1/2}`; isolated nodes get `D^{-1/2}_ii = 0`.
pub fn normalized_laplacian(e: &WeightMatrix) -> Result<LaplacianSet> {
    let (laplacian, _) = crate::tensor::ops_laplacian(e.values())?;
    let n = e.order();
    let degree = (0..n).map(|i| (0..n).map(|j| e.get(i, j)).sum()).collect();
    Ok(LaplacianSet { laplacian, degree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::GraphRole;
    use crate::spectral::eigh_sym;
    use approx::assert_abs_diff_eq;

    fn wm(n: usize, data: Vec<f64>) -> WeightMatrix {
        WeightMatrix::new(Tensor::new(vec![n, n], data).unwrap(), GraphRole::Agent).unwrap()
    }

    #[test]
    fn two_nodes() {
        let l = normalized_laplacian(&wm(2, vec![0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(l.laplacian.data(), &[1.0, -1.0, -1.0, 1.0]);
        let b = eigh_sym(&l.laplacian).unwrap();
        assert_abs_diff_eq!(b.lambdas()[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.lambdas()[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn isolated_nodes_give_identity() {
        let l = normalized_laplacian(&wm(3, vec![0.0; 9])).unwrap();
        assert_eq!(l.laplacian, Tensor::eye(3));
        assert_eq!(l.degree, vec![0.0; 3]);
    }

    #[test]
    fn complete_graph_spectrum() {
        let l = normalized_laplacian(&wm(3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0])).unwrap();
        let b = eigh_sym(&l.laplacian).unwrap();
        assert_abs_diff_eq!(b.lambdas()[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lambdas()[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lambdas()[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_degree_vector_in_null_space() {
        let l = normalized_laplacian(&wm(3, vec![0.0, 0.5, 2.0, 0.5, 0.0, 1.0, 2.0, 1.0, 0.0])).unwrap();
        let v: Vec<f64> = l.degree.iter().map(|d| d.sqrt()).collect();
        let mut norm = 0.0f64;
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| l.laplacian.get(&[i, j]) * v[j]).sum();
            norm += r * r;
        }
        assert!(norm.sqrt() < 1e-9);
    }
}
