//! Monte Carlo aggregation: compensated means, robust estimators for heavy
//! tails, empirical quantiles, two-sample Kolmogorov–Smirnov distances and
//! least-squares line fits.

/// Running sums with Neumaier compensation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: usize,
    sum: f64,
    comp: f64,
    sum_sq: f64,
    comp_sq: f64,
}

#[inline]
fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        neumaier(&mut self.sum, &mut self.comp, x);
        neumaier(&mut self.sum_sq, &mut self.comp_sq, x * x);
    }

    /// Fixed-order merge of two partial accumulators.
    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        neumaier(&mut self.sum, &mut self.comp, other.sum);
        self.comp += other.comp;
        neumaier(&mut self.sum_sq, &mut self.comp_sq, other.sum_sq);
        self.comp_sq += other.comp_sq;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.sum + self.comp) / self.n as f64
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        (((self.sum_sq + self.comp_sq) - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let acc: Accumulator = xs.iter().copied().collect();
    (acc.mean(), acc.stderr())
}

/// Median of `groups` block means over consecutive blocks.
///
/// The standard error is `sqrt(π/2)·sd(block means)/sqrt(groups)`, the
/// asymptotic efficiency of the sample median of Gaussian block means.
pub fn median_of_means(xs: &[f64], groups: usize) -> (f64, f64) {
    let groups = groups.clamp(1, xs.len().max(1));
    let block = xs.len() / groups;
    if block == 0 {
        return mean_stderr(xs);
    }
    let means: Vec<f64> = (0..groups)
        .map(|g| {
            let acc: Accumulator = xs[g * block..(g + 1) * block].iter().copied().collect();
            acc.mean()
        })
        .collect();
    let median = quantile(&sorted(&means), 0.5);
    let acc: Accumulator = means.iter().copied().collect();
    let se = (std::f64::consts::PI / 2.0).sqrt() * acc.variance().sqrt() / (groups as f64).sqrt();
    (median, se)
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
/// Ties are handled by evaluating both empirical CDFs after each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at `level`.
pub fn ks_critical(n: usize, m: usize, level: f64) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Two-sided 97.5% Student-t quantile for `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        _ => 1.96,
    }
}

/// Hill estimator of the tail index from the `k` largest absolute values.
pub fn hill_estimator(xs: &[f64], k: usize) -> f64 {
    let mut abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(abs.len() - 1);
    let threshold = abs[k].ln();
    let mean_excess = abs[..k].iter().map(|x| x.ln() - threshold).sum::<f64>() / k as f64;
    1.0 / mean_excess
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let fit_r = |a: &[f64], b: &[f64]| {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    fit_r(&rx, &ry)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &id in &idx[i..=j] {
            r[id] = avg;
        }
        i = j + 1;
    }
    r
}
