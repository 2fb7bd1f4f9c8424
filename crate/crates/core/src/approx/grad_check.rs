/// Largest relative disagreement between an analytic gradient and central
/// finite differences.
///
/// `f` returns the scalar value and its analytic gradient at a parameter
/// point. For each coordinate the error is
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let (up, _) = f(&probe);
        probe[i] = orig - eps;
        let (down, _) = f(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{Activation, Mlp};

    #[test]
    fn exact_for_linear_maps() {
        let coeffs = [0.5, -1.25, 3.0];
        let f = |p: &[f64]| {
            let v = p.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
            (v, coeffs.to_vec())
        };
        assert!(grad_check(f, &[0.1, 0.2, 0.3], 1e-5) < 1e-9);
    }

    fn mlp_objective(net: &Mlp, x: &[f64], upstream: &[f64]) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        let sizes = net.sizes().to_vec();
        let acts = net.activations().to_vec();
        let (x, up) = (x.to_vec(), upstream.to_vec());
        move |p: &[f64]| {
            let n = Mlp::from_params(&sizes, &acts, p.to_vec()).unwrap();
            let y = n.forward(&x).unwrap();
            let v = y.iter().zip(&up).map(|(a, b)| a * b).sum();
            (v, n.gradient(&x, &up).unwrap().0)
        }
    }

    #[test]
    fn tanh_mlp_passes() {
        let net = Mlp::new(&[3, 5, 2], &[Activation::Tanh, Activation::Tanh], 21).unwrap();
        let err = grad_check(mlp_objective(&net, &[0.3, -0.8, 0.5], &[1.0, -0.6]), net.params(), 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let net = Mlp::new(&[3, 5, 2], &[Activation::Tanh, Activation::Tanh], 21).unwrap();
        let inner = mlp_objective(&net, &[0.3, -0.8, 0.5], &[1.0, -0.6]);
        let broken = |p: &[f64]| {
            let (v, mut g) = inner(p);
            g[4] *= 1.5;
            (v, g)
        };
        assert!(grad_check(broken, net.params(), 1e-5) > 1e-2);
    }
}
