use std::collections::HashSet;

use proptest::prelude::*;

use wednet::bec::{bone_flags, label_connected_domains, project_frame};
use wednet::eval::{baf_filter, nnb_filter, rp_filter, snr_from_counts, FilterConfig};
use wednet::event::{partition_windows, validate_stream};
use wednet::geometry::{
    ball_group, farthest_event_sampling, idw_stencils, normalize_coords, LevelSpec, NormalizedPoint,
};
use wednet::io::{read_binary, read_text, write_binary, write_text};
use wednet::nn::{wednet_forward, LcscHyperParams, ModelParams, NetworkShape};
use wednet::temporal::{temporal_probability, tw_filter, tw_keep_mask, TemporalStats};
use wednet::{Event, EventWindow, Label, SensorGeometry};

const SIDE: u16 = 24;

fn geometry() -> SensorGeometry {
    SensorGeometry::new(SIDE, SIDE)
}

fn label_strategy() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Unknown), Just(Label::Real), Just(Label::Noise)]
}

fn event_strategy(t_max: u64) -> impl Strategy<Value = Event> {
    (0..t_max, 0..SIDE, 0..SIDE, any::<bool>(), label_strategy())
        .prop_map(|(t, x, y, pos, l)| Event::new(t, x, y, if pos { 1 } else { -1 }).with_label(l))
}

/// A validated stream: in bounds, time-ordered.
fn stream_strategy(max_len: usize, t_max: u64) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec(event_strategy(t_max), 0..max_len).prop_map(|v| validate_stream(v, &geometry()).unwrap())
}

fn window_strategy() -> impl Strategy<Value = EventWindow> {
    stream_strategy(200, 50_000)
        .prop_filter("non-empty", |s| !s.is_empty())
        .prop_map(|s| EventWindow::new(s, 0, false))
}

fn point_strategy() -> impl Strategy<Value = NormalizedPoint> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(nx, ny, nt)| NormalizedPoint { nx, ny, nt, p: 1 })
}

fn pairwise_distinct(points: &[NormalizedPoint]) -> bool {
    let mut seen = HashSet::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].dist2(&points[j]);
            if d == 0.0 || !seen.insert(d.to_bits()) {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip(s in stream_strategy(100, 1 << 40)) {
        let mut buf = Vec::new();
        write_text(&mut buf, &s, &geometry()).unwrap();
        let (back, g) = read_text(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
        prop_assert_eq!(g, geometry());
    }

    #[test]
    fn binary_round_trip(s in stream_strategy(100, u64::MAX)) {
        let mut buf = Vec::new();
        write_binary(&mut buf, &s, &geometry()).unwrap();
        prop_assert_eq!(buf.len(), 20 + 14 * s.len());
        let (back, g) = read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
        prop_assert_eq!(g, geometry());
    }

    #[test]
    fn partition_concatenates_to_stream(s in stream_strategy(300, 10_000), w in 1usize..64) {
        let windows = partition_windows(&s, w);
        let joined: Vec<Event> = windows.iter().flat_map(|w| w.events.iter().copied()).collect();
        prop_assert_eq!(&joined, &s);
        for (i, win) in windows.iter().enumerate() {
            prop_assert_eq!(win.start, i * w);
            prop_assert_eq!(win.is_tail, win.len() < w);
            prop_assert!(win.t_min as f64 <= win.t_mu && win.t_mu <= win.t_max as f64);
        }
    }

    #[test]
    fn validate_is_idempotent(v in prop::collection::vec(event_strategy(1000), 0..100)) {
        let once = validate_stream(v.clone(), &geometry()).unwrap();
        let twice = validate_stream(once.clone(), &geometry()).unwrap();
        prop_assert_eq!(&once, &twice);
        // same multiset, stable among equal timestamps
        let mut expect = v;
        expect.sort_by_key(|e| e.t);
        prop_assert_eq!(once, expect);
    }

    #[test]
    fn tw_partitions_window(win in window_strategy(), t_lim in 0.0..30_000.0f64) {
        let (kept, dropped) = tw_filter(&win, t_lim);
        prop_assert_eq!(kept.len() + dropped.len(), win.len());
        for e in &kept {
            prop_assert!((e.t as f64 - win.t_mu).abs() <= t_lim);
        }
        for e in &dropped {
            prop_assert!((e.t as f64 - win.t_mu).abs() > t_lim);
        }
    }

    #[test]
    fn tw_is_monotone(win in window_strategy(), a in 0.0..30_000.0f64, b in 0.0..30_000.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = tw_keep_mask(&win, lo);
        let large = tw_keep_mask(&win, hi);
        prop_assert!(small.iter().zip(&large).all(|(&s, &l)| !s || l));
    }

    #[test]
    fn temporal_probabilities_normalize(win in window_strategy()) {
        let ts: Vec<u64> = win.timestamps().collect();
        let stats = TemporalStats::from_timestamps(&ts).unwrap();
        prop_assume!(stats.sigma > 0.0);
        let total: f64 = ts.iter().map(|&t| temporal_probability(t, &stats, &ts).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bone_extremes_and_monotonicity(s in stream_strategy(200, 1000), tau in 1usize..10) {
        let g = geometry();
        prop_assert!(bone_flags(&s, &g, 1).iter().all(|&b| b));
        prop_assert!(bone_flags(&s, &g, usize::MAX).iter().all(|&b| !b));
        let low = bone_flags(&s, &g, tau);
        let high = bone_flags(&s, &g, tau + 1);
        prop_assert!(low.iter().zip(&high).all(|(&l, &h)| l || !h));
    }

    #[test]
    fn component_sizes_cover_occupied_pixels(s in stream_strategy(300, 1000)) {
        let frame = project_frame(&s, &geometry());
        let labeling = label_connected_domains(&frame);
        let total: usize = labeling.size_of.iter().sum();
        prop_assert_eq!(total, frame.occupied_count());
        let distinct: HashSet<(u16, u16)> = s.iter().map(|e| (e.x, e.y)).collect();
        prop_assert_eq!(frame.occupied_count(), distinct.len());
    }

    #[test]
    fn bone_flags_follow_events_under_permutation(
        s in stream_strategy(150, 1000),
        seed in any::<u64>(),
        tau in 1usize..6,
    ) {
        let g = geometry();
        let flags = bone_flags(&s, &g, tau);
        let mut order: Vec<usize> = (0..s.len()).collect();
        // deterministic shuffle from the seed
        let mut state = seed | 1;
        for i in (1..order.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let permuted: Vec<Event> = order.iter().map(|&i| s[i]).collect();
        let pflags = bone_flags(&permuted, &g, tau);
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(pflags[j], flags[i]);
        }
    }

    #[test]
    fn idw_weights_are_convex(
        targets in prop::collection::vec(point_strategy(), 1..50),
        sources in prop::collection::vec(point_strategy(), 1..30),
    ) {
        for st in idw_stencils(&targets, &sources) {
            prop_assert!(st.len >= 1 && st.len <= 3);
            prop_assert!(st.weight[..st.len].iter().all(|&w| w >= 0.0));
            let sum: f64 = st.weight[..st.len].iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn grouping_ignores_member_order(
        points in prop::collection::vec(point_strategy(), 2..40),
        radius in 0.05..1.8f64,
        k in 1usize..8,
        rot in 0usize..40,
    ) {
        prop_assume!(pairwise_distinct(&points));
        let n = points.len();
        let centroids = vec![0usize];
        // rotate the non-centroid points
        let mut order: Vec<usize> = (1..n).collect();
        order.rotate_left(rot % (n - 1));
        order.insert(0, 0);
        let permuted: Vec<NormalizedPoint> = order.iter().map(|&i| points[i]).collect();
        let a: Vec<usize> = ball_group(&points, &centroids, radius, k);
        let b: Vec<usize> = ball_group(&permuted, &centroids, radius, k).iter().map(|&j| order[j]).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn filters_label_every_event(s in stream_strategy(300, 20_000)) {
        let g = geometry();
        let c = FilterConfig::default();
        prop_assert_eq!(baf_filter(&s, &g, &c).len(), s.len());
        prop_assert_eq!(nnb_filter(&s, &g, &c).len(), s.len());
        prop_assert_eq!(rp_filter(&s, &g, &c).len(), s.len());
    }

    #[test]
    fn filters_are_causal(s in stream_strategy(300, 20_000), cut in 0u64..20_000) {
        // labels of a prefix do not change when later events are appended
        let g = geometry();
        let c = FilterConfig::default();
        let prefix_len = s.partition_point(|e| e.t <= cut);
        let prefix = &s[..prefix_len];
        prop_assert_eq!(&baf_filter(prefix, &g, &c)[..], &baf_filter(&s, &g, &c)[..prefix_len]);
        prop_assert_eq!(&nnb_filter(prefix, &g, &c)[..], &nnb_filter(&s, &g, &c)[..prefix_len]);
        prop_assert_eq!(&rp_filter(prefix, &g, &c)[..], &rp_filter(&s, &g, &c)[..prefix_len]);
    }

    #[test]
    fn snr_moves_with_survivors(m in 2u64..100_000, n in 2u64..100_000) {
        let base = snr_from_counts(m, n, 20.0);
        prop_assert!(snr_from_counts(m, n - 1, 20.0) > base);
        prop_assert!(snr_from_counts(m - 1, n, 20.0) < base);
    }
}

/// Brute-force optimal covering radius over all `t`-subsets.
fn optimal_radius(points: &[NormalizedPoint], t: usize) -> f64 {
    fn rec(points: &[NormalizedPoint], t: usize, from: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == t {
            let r = points
                .iter()
                .map(|p| {
                    chosen
                        .iter()
                        .map(|&c| p.dist2(&points[c]))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            *best = best.min(r);
            return;
        }
        for i in from..points.len() {
            chosen.push(i);
            rec(points, t, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(points, t, 0, &mut Vec::new(), &mut best);
    best.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_a_two_approximation(
        points in prop::collection::vec(point_strategy(), 4..40),
        t in 1usize..=4,
    ) {
        let all = vec![true; points.len()];
        let picks = farthest_event_sampling(&points, t, &all).unwrap();
        prop_assert_eq!(&picks, &farthest_event_sampling(&points, t, &all).unwrap());
        let covering = points
            .iter()
            .map(|p| picks.iter().map(|&c| p.dist2(&points[c])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
            .sqrt();
        prop_assert!(covering <= 2.0 * optimal_radius(&points, t) + 1e-12);
    }

    #[test]
    fn network_commutes_with_event_order(
        raw in prop::collection::vec((0u64..1_000_000, 0..SIDE, 0..SIDE, any::<bool>()), 12..40),
        rot in 1usize..40,
        seed in any::<u64>(),
    ) {
        let g = geometry();
        let mut events: Vec<Event> = raw.iter().map(|&(t, x, y, p)| Event::new(t, x, y, if p { 1 } else { -1 })).collect();
        events.sort_by_key(|e| e.t);
        prop_assume!(pairwise_distinct(&normalize_coords(&events, &g)));
        let params = ModelParams::<f64>::init(NetworkShape::new(LevelSpec::tiny()).unwrap(), LcscHyperParams::default(), seed).unwrap();
        let bone = bone_flags(&events, &g, 2);
        let logits = wednet_forward(&events, &bone, &g, &params).unwrap();
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.rotate_left(rot % events.len());
        let permuted: Vec<Event> = order.iter().map(|&i| events[i]).collect();
        let pbone: Vec<bool> = order.iter().map(|&i| bone[i]).collect();
        let plogits = wednet_forward(&permuted, &pbone, &g, &params).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(plogits[j].to_bits(), logits[i].to_bits());
        }
    }
}
