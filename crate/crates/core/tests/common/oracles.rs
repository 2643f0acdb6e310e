//! Independent reference computations shared by the unit-level tests and the acceptance suite.

/// `KL(N(mu, e^lv) || N(0, 1))` by composite Simpson over `mu ± 14 sigma`.
pub fn kl_integral(mu: f64, lv: f64) -> f64 {
    let s = (0.5 * lv).exp();
    let (a, b) = (mu - 14.0 * s, mu + 14.0 * s);
    let n = 40_000;
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let log_p = -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_q = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        log_p.exp() * (log_p - log_q)
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Direct summation over cells with probabilities, natural log converted to bits.
pub fn mi_oracle(c: &[Vec<u64>]) -> f64 {
    let n: f64 = c.iter().flatten().sum::<u64>() as f64;
    let p: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|&x| x as f64 / n).collect()).collect();
    let px: Vec<f64> = p.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..p[0].len()).map(|j| p.iter().map(|r| r[j]).sum()).collect();
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in 0..py.len() {
            if p[i][j] > 0.0 {
                s += p[i][j] * (p[i][j] / (px[i] * py[j])).ln();
            }
        }
    }
    s / std::f64::consts::LN_2
}

pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}
