//! Exact L1-Wasserstein distance on finite 1-D supports.

use super::TheoryError;

const NORM_TOL: f64 = 1e-9;

/// W1 between two distributions on shared 1-D coordinates, via the
/// CDF-difference integral over the sorted support.
pub fn w1_discrete(p: &[f64], q: &[f64], coords: &[f64]) -> Result<f64, TheoryError> {
    if p.len() != coords.len() || q.len() != coords.len() {
        return Err(TheoryError::LengthMismatch {
            p: p.len().min(q.len()),
            coords: coords.len(),
        });
    }
    for &mass in p.iter().chain(q) {
        if mass < -NORM_TOL {
            return Err(TheoryError::NegativeMass(mass));
        }
    }
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if (sp - 1.0).abs() > NORM_TOL {
        return Err(TheoryError::NotNormalized(sp));
    }
    if (sq - 1.0).abs() > NORM_TOL {
        return Err(TheoryError::NotNormalized(sq));
    }
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&i, &j| coords[i].partial_cmp(&coords[j]).unwrap());
    let mut acc = 0.0;
    let mut cdf_gap = 0.0;
    for w in order.windows(2) {
        cdf_gap += p[w[0]] - q[w[0]];
        acc += cdf_gap.abs() * (coords[w[1]] - coords[w[0]]);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_distributions_have_zero_distance() {
        let p = [0.2, 0.3, 0.5];
        let coords = [0.0, 1.0, 2.5];
        assert_eq!(w1_discrete(&p, &p, &coords).unwrap(), 0.0);
    }

    #[test]
    fn dirac_versus_uniform_closed_form() {
        let p = [1.0, 0.0];
        let q = [0.5, 0.5];
        let coords = [0.0, 1.0];
        assert!((w1_discrete(&p, &q, &coords).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let p = [0.5, 0.4];
        let q = [0.5, 0.5];
        assert!(matches!(
            w1_discrete(&p, &q, &[0.0, 1.0]),
            Err(TheoryError::NotNormalized(_))
        ));
    }

    /// Exact min-cost transport by successive shortest augmenting paths on
    /// the small bipartite flow network (the LP optimum); independent of
    /// the CDF formula.
    fn transport_lp(p: &[f64], q: &[f64], coords: &[f64]) -> f64 {
        let n = p.len();
        // nodes: 0 = source, 1..=n supplies, n+1..=2n demands, 2n+1 = sink
        let n_nodes = 2 * n + 2;
        let sink = 2 * n + 1;
        struct Edge {
            to: usize,
            cap: f64,
            cost: f64,
            rev: usize,
        }
        let mut graph: Vec<Vec<Edge>> = (0..n_nodes).map(|_| Vec::new()).collect();
        let mut add_edge = |graph: &mut Vec<Vec<Edge>>, a: usize, b: usize, cap: f64, cost: f64| {
            let ra = graph[b].len();
            let rb = graph[a].len();
            graph[a].push(Edge { to: b, cap, cost, rev: ra });
            graph[b].push(Edge { to: a, cap: 0.0, cost: -cost, rev: rb });
        };
        for i in 0..n {
            add_edge(&mut graph, 0, 1 + i, p[i], 0.0);
            add_edge(&mut graph, n + 1 + i, sink, q[i], 0.0);
        }
        for i in 0..n {
            for j in 0..n {
                add_edge(&mut graph, 1 + i, n + 1 + j, f64::INFINITY, (coords[i] - coords[j]).abs());
            }
        }
        let mut total = 0.0;
        loop {
            // Bellman-Ford shortest path in the residual network
            let mut dist = vec![f64::INFINITY; n_nodes];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; n_nodes];
            dist[0] = 0.0;
            for _ in 0..n_nodes {
                let mut changed = false;
                for u in 0..n_nodes {
                    if !dist[u].is_finite() {
                        continue;
                    }
                    for (ei, e) in graph[u].iter().enumerate() {
                        if e.cap > 1e-12 && dist[u] + e.cost < dist[e.to] - 1e-15 {
                            dist[e.to] = dist[u] + e.cost;
                            prev[e.to] = Some((u, ei));
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            // bottleneck along the path
            let mut bottleneck = f64::INFINITY;
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                bottleneck = bottleneck.min(graph[u][ei].cap);
                v = u;
            }
            if bottleneck <= 1e-12 {
                break;
            }
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                total += bottleneck * graph[u][ei].cost;
                graph[u][ei].cap -= bottleneck;
                let rev = graph[u][ei].rev;
                graph[v][rev].cap += bottleneck;
                v = u;
            }
        }
        total
    }

    #[test]
    fn random_five_point_distributions_match_transport_oracle() {
        let mut rng = crate::env::rng_from(7);
        for _ in 0..200 {
            let mut p: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mut q: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
            let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
            p.iter_mut().for_each(|x| *x /= sp);
            q.iter_mut().for_each(|x| *x /= sq);
            let mut coords: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let fast = w1_discrete(&p, &q, &coords).unwrap();
            let lp = transport_lp(&p, &q, &coords);
            assert!((fast - lp).abs() < 1e-9, "{fast} vs {lp}");
        }
    }

    #[test]
    fn metric_properties_on_random_triples() {
        let mut rng = crate::env::rng_from(11);
        for _ in 0..200 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let coords = [0.0, 0.7, 1.1, 2.9];
            let (p, q, r) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let pq = w1_discrete(&p, &q, &coords).unwrap();
            let qp = w1_discrete(&q, &p, &coords).unwrap();
            assert!((pq - qp).abs() < 1e-9, "symmetry");
            let pr = w1_discrete(&p, &r, &coords).unwrap();
            let rq = w1_discrete(&r, &q, &coords).unwrap();
            assert!(pq <= pr + rq + 1e-9, "triangle inequality");
        }
    }
}
