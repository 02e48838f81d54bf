use proptest::prelude::*;
use spade::data::{synthesize_tourism_like, window, Horizon, SeriesRecord};
use spade::evaluation::{scoped_sums, wql, EvalSet, HorizonFilter, MetricScope, SeriesFilter};
use spade::model::{ForecastGrid, SeriesForecast};

fn horizons() -> Vec<Horizon> {
    vec![Horizon::new(1, 1).unwrap(), Horizon::new(2, 2).unwrap(), Horizon::new(1, 3).unwrap()]
}

fn corpus(demand: &[Vec<f64>], peaks: &[Vec<bool>]) -> Vec<SeriesRecord> {
    let t_len = demand[0].len();
    let mut records = synthesize_tourism_like(demand.len(), 24, 1).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.timestamps.truncate(t_len);
        r.covariates.iter_mut().for_each(|c| c.truncate(t_len));
        r.demand = demand[i].clone();
        r.peaks = peaks[i].clone();
    }
    records
}

/// Forecast grid whose values come from `f(series, t, h, q)`.
fn grid_from(set: &EvalSet, quantiles: &[f64], f: impl Fn(usize, usize, usize, usize) -> f64) -> ForecastGrid {
    let h_len = set.horizons.len();
    let series = set
        .series
        .iter()
        .enumerate()
        .map(|(s, es)| {
            let mut values = Vec::new();
            for &t in &es.creation_times {
                for h in 0..h_len {
                    for q in 0..quantiles.len() {
                        values.push(f(s, t, h, q));
                    }
                }
            }
            SeriesForecast {
                series_id: es.series_id.clone(),
                creation_times: es.creation_times.clone(),
                values,
            }
        })
        .collect();
    ForecastGrid {
        quantiles: quantiles.to_vec(),
        horizons: set.horizons.clone(),
        series,
    }
}

fn inputs() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<bool>>, Vec<f64>, usize)> {
    (1usize..5, 10usize..20).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..30.0, t), n),
            prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.2), t), n),
            prop::collection::vec(0.0f64..40.0, n * t * 3 * 2),
            1usize..5,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn peak_and_post_peak_are_disjoint_parts_of_overall((demand, peaks, noise, w) in inputs()) {
        let records = corpus(&demand, &peaks);
        let hz = horizons();
        let set = EvalSet::from_windows(&records, &window(&records, 1, &hz).unwrap(), &hz);
        let t_len = demand[0].len();
        let grid = grid_from(&set, &[0.5, 0.9], |s, t, h, q| noise[((s * t_len + t) * 3 + h) * 2 + q]);
        let sums = |series, horizons| {
            scoped_sums(&set, &grid, 0.9, &MetricScope::new(series, horizons, w).unwrap()).unwrap()
        };
        let all = sums(SeriesFilter::All, HorizonFilter::All);
        let pe = sums(SeriesFilter::All, HorizonFilter::Pe);
        let pe_series = sums(SeriesFilter::PeSeries, HorizonFilter::Pe);
        let ppe = sums(SeriesFilter::All, HorizonFilter::PostPeak);
        // PE horizons only exist in PE series
        prop_assert!((pe.0 - pe_series.0).abs() < 1e-9);
        prop_assert!(pe.0 + ppe.0 <= all.0 + 1e-9);
        prop_assert!(pe.1 + ppe.1 <= all.1 + 1e-9);
        let pe_series_all = sums(SeriesFilter::PeSeries, HorizonFilter::All);
        prop_assert!(pe_series_all.0 <= all.0 + 1e-9);
    }

    #[test]
    fn series_order_does_not_matter((demand, peaks, noise, w) in inputs()) {
        let records = corpus(&demand, &peaks);
        let hz = horizons();
        let t_len = demand[0].len();
        let set = EvalSet::from_windows(&records, &window(&records, 1, &hz).unwrap(), &hz);
        let grid = grid_from(&set, &[0.5], |s, t, h, _| noise[(s * t_len + t) * 3 + h]);
        let mut rev_set = set.clone();
        rev_set.series.reverse();
        let mut rev_grid = grid.clone();
        rev_grid.series.reverse();
        for horizons in [HorizonFilter::All, HorizonFilter::Pe, HorizonFilter::PostPeak] {
            let scope = MetricScope::new(SeriesFilter::All, horizons, w).unwrap();
            let a = scoped_sums(&set, &grid, 0.5, &scope).unwrap();
            let b = scoped_sums(&rev_set, &rev_grid, 0.5, &scope).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-9 * a.0.abs().max(1.0));
            prop_assert!((a.1 - b.1).abs() <= 1e-9 * a.1.abs().max(1.0));
        }
    }

    #[test]
    fn exact_forecasts_score_zero((demand, peaks, _noise, w) in inputs()) {
        let records = corpus(&demand, &peaks);
        let hz = horizons();
        let set = EvalSet::from_windows(&records, &window(&records, 1, &hz).unwrap(), &hz);
        let grid = grid_from(&set, &[0.5, 0.9], |s, t, h, _| {
            let w = hz[h].window(t);
            if w.end <= demand[s].len() { demand[s][w].iter().sum() } else { 0.0 }
        });
        for horizons in [HorizonFilter::All, HorizonFilter::Pe, HorizonFilter::PostPeak] {
            let scope = MetricScope::new(SeriesFilter::All, horizons, w).unwrap();
            if let Ok(v) = wql(&set, &grid, 0.9, &scope) {
                prop_assert_eq!(v, 0.0);
            }
        }
    }
}
