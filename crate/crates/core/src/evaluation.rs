//! Channel extraction, empirical Wasserstein-1 distances, and evaluation
//! reports.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::io::{read_json, write_json};
use crate::data::{
    compute_stats, find_max_pixel, intensity, ConditioningVector, Dataset, Response, HEIGHT, WIDTH,
};
use crate::error::{Error, Result};
use crate::nets::{
    conditions_tensor, latents_tensor, tensor_to_response, Exec, LatentCode, Mode, ModelParams,
};

pub const N_CHANNELS: usize = 5;
pub const DEFAULT_BINS: usize = 40;

/// Half-open pixel rectangle `[row_start, row_end) × [col_start, col_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl Rect {
    fn sum(&self, x: &Response) -> f64 {
        let mut s = 0.0;
        for k in self.row_start..self.row_end {
            for l in self.col_start..self.col_end {
                s += x.get(k, l) as f64;
            }
        }
        s
    }
}

/// Pixel regions read out by each of the five channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMap {
    pub channels: [Vec<Rect>; N_CHANNELS],
}

impl Default for ChannelMap {
    /// Four quadrants (split at row 28, column 15) in row-major order, then
    /// the whole image.
    fn default() -> Self {
        let (h2, w2) = (HEIGHT / 2, WIDTH / 2);
        let r = |row_start, row_end, col_start, col_end| Rect {
            row_start,
            row_end,
            col_start,
            col_end,
        };
        Self {
            channels: [
                vec![r(0, h2, 0, w2)],
                vec![r(0, h2, w2, WIDTH)],
                vec![r(h2, HEIGHT, 0, w2)],
                vec![r(h2, HEIGHT, w2, WIDTH)],
                vec![r(0, HEIGHT, 0, WIDTH)],
            ],
        }
    }
}

impl ChannelMap {
    pub fn validate(&self) -> Result<()> {
        for (c, rects) in self.channels.iter().enumerate() {
            for r in rects {
                if r.row_start > r.row_end
                    || r.col_start > r.col_end
                    || r.row_end > HEIGHT
                    || r.col_end > WIDTH
                {
                    return Err(Error::InvalidArgument(format!(
                        "channel {} region {r:?} lies outside {HEIGHT}×{WIDTH}",
                        c + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn extract(&self, x: &Response) -> ChannelValues {
        ChannelValues(std::array::from_fn(|c| {
            self.channels[c].iter().map(|r| r.sum(x)).sum()
        }))
    }
}

/// `ch1..ch5` of one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelValues(pub [f64; N_CHANNELS]);

/// Channel sums under the default quadrant map.
pub fn extract_channels(x: &Response) -> ChannelValues {
    ChannelMap::default().extract(x)
}

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("ws1 input contains NaN".into()));
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(s)
}

/// Empirical Wasserstein-1 distance `∫ |F_a⁻¹(q) − F_b⁻¹(q)| dq`.
///
/// Equal sizes reduce to the mean absolute difference of order statistics.
/// Otherwise the quantile functions are walked over the merged grid of
/// breakpoints `i/n` and `j/m`, compared exactly in integer arithmetic.
pub fn ws1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ws1 needs two non-empty samples".into()));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / n as f64);
    }
    // breakpoints on the common scale n·m: a steps every m, b every n
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0u128;
    let mut acc = 0.0;
    let end = (n * m) as u128;
    while pos < end {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        acc += (a[i] - b[j]).abs() * (next - pos) as f64;
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / end as f64)
}

/// Counts of true and generated values over shared uniform bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelHistogram {
    pub channel: usize,
    /// `n_bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub count_true: Vec<u64>,
    pub count_gen: Vec<u64>,
}

impl ChannelHistogram {
    pub fn n_bins(&self) -> usize {
        self.count_true.len()
    }
}

/// Shared bins spanning the union's range. When every value is equal the
/// histogram collapses to one zero-width bin holding everything.
pub fn channel_histograms(
    true_values: &[f64],
    generated_values: &[f64],
    channel: usize,
    n_bins: usize,
) -> Result<ChannelHistogram> {
    if !(1..=N_CHANNELS).contains(&channel) {
        return Err(Error::InvalidArgument(format!(
            "channel must be in 1..={N_CHANNELS}, got {channel}"
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("n_bins must be at least 2, got {n_bins}")));
    }
    if true_values.is_empty() || generated_values.is_empty() {
        return Err(Error::Empty("histogram inputs must be non-empty".into()));
    }
    let all = true_values.iter().chain(generated_values);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(ChannelHistogram {
            channel,
            edges: vec![lo, hi],
            count_true: vec![true_values.len() as u64],
            count_gen: vec![generated_values.len() as u64],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let bin = |v: f64| (((v - lo) / (hi - lo) * n_bins as f64) as usize).min(n_bins - 1);
    let count = |vs: &[f64]| {
        let mut c = vec![0u64; n_bins];
        for &v in vs {
            c[bin(v)] += 1;
        }
        c
    };
    Ok(ChannelHistogram {
        channel,
        edges,
        count_true: count(true_values),
        count_gen: count(generated_values),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_channel_ws: [f64; N_CHANNELS],
    pub mean_ws: f64,
    /// Mean pixel distance between generated shower centers and the stored
    /// center of their group.
    pub center_error_mean: f64,
    /// `|mean f_in(true) − mean f_in(generated)|`.
    pub intensity_gap: f64,
    pub histograms: Vec<ChannelHistogram>,
    /// Generated responses.
    pub n_samples: usize,
    pub n_true: usize,
    pub samples_per_condition: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub samples_per_condition: usize,
    pub seed: u64,
    pub n_bins: usize,
    pub channel_map: ChannelMap,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            samples_per_condition: 8,
            seed: 0,
            n_bins: DEFAULT_BINS,
            channel_map: ChannelMap::default(),
        }
    }
}

/// Generated responses for every group of `dataset`, `per_group` each, in
/// group order. Latent codes are drawn from one stream seeded by `seed`.
pub fn generate_for_groups(
    params: &ModelParams<f32>,
    dataset: &Dataset,
    per_group: usize,
    seed: u64,
) -> Result<Vec<(usize, Response)>> {
    let nets = params.check_layout()?;
    if (params.config.height, params.config.width) != (HEIGHT, WIDTH) {
        return Err(Error::Shape(format!(
            "model generates {}×{} images, responses are {HEIGHT}×{WIDTH}",
            params.config.height, params.config.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dataset.n_groups() * per_group);
    for g in 0..dataset.n_groups() {
        let c = dataset.group_condition(g);
        let zs: Vec<LatentCode> = (0..per_group)
            .map(|_| LatentCode::sample(params.config.latent_dim, &mut rng))
            .collect();
        let conds: Vec<&ConditioningVector> = vec![c; per_group];
        let trace = nets.generator.forward(
            params,
            &conditions_tensor(&conds),
            &latents_tensor(&zs.iter().collect::<Vec<_>>()),
            Mode::Eval,
            Exec::Parallel,
        );
        for s in 0..per_group {
            out.push((g, tensor_to_response(trace.output().sample(s))?));
        }
    }
    Ok(out)
}

/// Compares `generated` (group id, response) pairs against every response
/// of `test`.
pub fn compare(
    test: &Dataset,
    generated: &[(usize, Response)],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test dataset".into()));
    }
    if generated.is_empty() {
        return Err(Error::Empty("generated set".into()));
    }
    settings.channel_map.validate()?;
    let stats = compute_stats(test)?;
    let map = &settings.channel_map;
    let true_ch: Vec<ChannelValues> = test.samples().iter().map(|s| map.extract(&s.response)).collect();
    let gen_ch: Vec<ChannelValues> = generated.iter().map(|(_, x)| map.extract(x)).collect();
    let column = |vs: &[ChannelValues], c: usize| -> Vec<f64> { vs.iter().map(|v| v.0[c]).collect() };

    let mut per_channel_ws = [0.0; N_CHANNELS];
    let mut histograms = Vec::with_capacity(N_CHANNELS);
    for c in 0..N_CHANNELS {
        let (t, g) = (column(&true_ch, c), column(&gen_ch, c));
        per_channel_ws[c] = ws1(&t, &g)?;
        histograms.push(channel_histograms(&t, &g, c + 1, settings.n_bins)?);
    }
    let mut center_error = 0.0;
    for (g, x) in generated {
        if *g >= stats.per_group.len() {
            return Err(Error::InvalidArgument(format!("generated sample refers to unknown group {g}")));
        }
        center_error += find_max_pixel(x).distance(&stats.group(*g).center);
    }
    let mean_in = |xs: &mut dyn Iterator<Item = &Response>, n: usize| {
        xs.map(intensity).sum::<f64>() / n as f64
    };
    let true_in = mean_in(&mut test.samples().iter().map(|s| &s.response), test.len());
    let gen_in = mean_in(&mut generated.iter().map(|(_, x)| x), generated.len());
    Ok(EvalReport {
        mean_ws: per_channel_ws.iter().sum::<f64>() / N_CHANNELS as f64,
        per_channel_ws,
        center_error_mean: center_error / generated.len() as f64,
        intensity_gap: (true_in - gen_in).abs(),
        histograms,
        n_samples: generated.len(),
        n_true: test.len(),
        samples_per_condition: settings.samples_per_condition,
        seed: settings.seed,
    })
}

pub fn evaluate_model(
    params: &ModelParams<f32>,
    test: &Dataset,
    samples_per_condition: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_model_with(
        params,
        test,
        &EvalSettings {
            samples_per_condition,
            seed,
            ..EvalSettings::default()
        },
    )
}

pub fn evaluate_model_with(
    params: &ModelParams<f32>,
    test: &Dataset,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test dataset".into()));
    }
    if settings.samples_per_condition == 0 {
        return Err(Error::InvalidArgument("samples_per_condition must be positive".into()));
    }
    let generated = generate_for_groups(params, test, settings.samples_per_condition, settings.seed)?;
    compare(test, &generated, settings)
}

fn histogram_csv(h: &ChannelHistogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count_true,count_gen\n");
    for b in 0..h.n_bins() {
        // `{}` on f64 prints the shortest string that round-trips exactly
        let _ = writeln!(s, "{},{},{},{}", h.edges[b], h.edges[b + 1], h.count_true[b], h.count_gen[b]);
    }
    s
}

/// Writes `report.json` and `hist_ch{1..5}.csv`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    for h in &report.histograms {
        write_histogram(h, dir)?;
    }
    Ok(())
}

/// Writes `hist_ch{channel}.csv` into `dir`.
pub fn write_histogram(h: &ChannelHistogram, dir: &Path) -> Result<()> {
    let path = dir.join(format!("hist_ch{}.csv", h.channel));
    fs::write(&path, histogram_csv(h)).map_err(|e| Error::io(&path, e))
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    read_json(&dir.join("report.json"))
}

/// One row of the side-by-side sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTriple {
    pub group_id: usize,
    pub condition: [f32; 9],
    pub truth: Vec<f32>,
    pub generated: Vec<f32>,
}

/// `count` (condition, true, generated) triples, cycling through groups in
/// order and pairing each group's members with fresh generations.
pub fn sample_grid(
    params: &ModelParams<f32>,
    dataset: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Vec<SampleTriple>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let n_groups = dataset.n_groups();
    let per_group = count.div_ceil(n_groups).max(1);
    let generated = generate_for_groups(params, dataset, per_group, seed)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (g, round) = (i % n_groups, i / n_groups);
        let members = &dataset.groups()[g];
        let truth = &dataset.samples()[members[round % members.len()]];
        out.push(SampleTriple {
            group_id: g,
            condition: truth.condition.to_array(),
            truth: truth.response.pixels().to_vec(),
            generated: generated[g * per_group + round].1.pixels().to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_examples() {
        assert_eq!(extract_channels(&Response::filled(1.0)).0, [420.0, 420.0, 420.0, 420.0, 1680.0]);
        assert_eq!(extract_channels(&Response::zeros()).0, [0.0; 5]);
        let mut x = Response::zeros();
        x.set(0, 0, 7.0);
        assert_eq!(extract_channels(&x).0, [7.0, 0.0, 0.0, 0.0, 7.0]);
        let mut x = Response::zeros();
        x.set(28, 14, 1.0);
        x.set(27, 15, 2.0);
        assert_eq!(extract_channels(&x).0, [0.0, 2.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn ws1_examples() {
        assert_eq!(ws1(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ws1(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(ws1(&[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 4.0]).unwrap(), 1.0);
        assert!(ws1(&[], &[1.0]).is_err());
        assert!(ws1(&[1.0], &[]).is_err());
    }

    #[test]
    fn ws1_unequal_sizes() {
        // F_a⁻¹ = 0 on [0, 1]; F_b⁻¹ = 0 on [0, 1/2), 3 on [1/2, 1]
        assert!((ws1(&[0.0], &[0.0, 3.0]).unwrap() - 1.5).abs() < 1e-15);
        // {0, 1, 2} vs {0, 2}: quantile pieces of width 1/3, 1/6, 1/6, 1/3
        // differences 0, 1, 1, 0 → 1/3
        assert!((ws1(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_fallback_and_bins() {
        let h = channel_histograms(&[2.0, 2.0], &[2.0], 1, 40).unwrap();
        assert_eq!((h.count_true.clone(), h.count_gen.clone()), (vec![2], vec![1]));
        let h = channel_histograms(&[0.0, 1.0, 2.0, 3.0], &[3.0], 4, 3).unwrap();
        assert_eq!(h.count_true, vec![1, 1, 2]);
        assert_eq!(h.count_gen, vec![0, 0, 1]);
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(channel_histograms(&[1.0], &[2.0], 6, 3).is_err());
        assert!(channel_histograms(&[1.0], &[2.0], 1, 1).is_err());
    }

    #[test]
    fn csv_has_header_and_one_row_per_bin() {
        let h = channel_histograms(&[0.0, 1.0], &[0.5], 2, 4).unwrap();
        let csv = histogram_csv(&h);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bin_lo,bin_hi,count_true,count_gen");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,0.25,1,0");
    }
}
