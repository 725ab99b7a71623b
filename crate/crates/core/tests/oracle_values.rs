//! Mixture densities and entropies against high-precision references
//! produced by `tests/oracles/gmm_oracle.py`.

use milb_core::{DiagGaussianMixture, RngStream};

fn cases() -> Vec<(DiagGaussianMixture, Vec<f64>)> {
    vec![
        (DiagGaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap(), vec![0.0]),
        (
            DiagGaussianMixture::new(
                vec![0.3, 0.7],
                vec![vec![-1.0, 2.0], vec![0.5, -0.5]],
                vec![vec![0.5, 2.0], vec![1.5, 0.25]],
            )
            .unwrap(),
            vec![0.1, 0.2],
        ),
        (
            DiagGaussianMixture::new(
                vec![0.2, 0.5, 0.3],
                vec![vec![-4.0], vec![0.0], vec![6.0]],
                vec![vec![0.1], vec![1.0], vec![3.0]],
            )
            .unwrap(),
            vec![5.0],
        ),
        (
            DiagGaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0; 3], vec![40.0; 3]], vec![vec![1.0; 3]; 2]).unwrap(),
            vec![20.0; 3],
        ),
    ]
}

const LOG_PDF: [f64; 4] = [
    -0.918_938_533_204_672_7,
    -2.644_122_304_557_188,
    -2.838_871_439_630_023,
    -602.756_815_599_614,
];

#[test]
fn log_pdf_matches_reference() {
    for ((m, y), want) in cases().iter().zip(LOG_PDF) {
        let got = m.log_pdf(y).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn entropy_references_lie_in_bounds() {
    let exact = [1.418_938_533_204_672_7, 2.351_662_771_885_737];
    let cs = cases();
    for (m, want) in [&cs[0].0, &cs[2].0].into_iter().zip(exact) {
        assert!(m.entropy_lower() <= want + 1e-12, "{} > {want}", m.entropy_lower());
        assert!(m.entropy_upper() >= want - 1e-12, "{} < {want}", m.entropy_upper());
        let mc = m.entropy_mc(200_000, &mut RngStream::new(11, 0)).unwrap();
        assert!((mc.estimate - want).abs() < 4.0 * mc.stderr + 1e-12, "{mc:?} vs {want}");
    }
    // one Gaussian: the upper bound is exact, the lower one is ln(4 pi) / 2
    assert!((cs[0].0.entropy_lower() - 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((cs[0].0.entropy_upper() - exact[0]).abs() < 1e-12);
}
