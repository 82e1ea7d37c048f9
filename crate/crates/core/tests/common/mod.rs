#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use pie_core::features::{expectation, extract_features};
use pie_core::{load_image, Image, RegionMap};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// The 30 bundled scenes, sorted by name.
pub fn corpus() -> Vec<Image> {
    let dir = data_dir().join("corpus");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_image(p).unwrap()).collect()
}

/// The first 20 corpus scenes.
pub fn corpus20() -> Vec<Image> {
    corpus().into_iter().take(20).collect()
}

pub fn reference() -> Image {
    load_image(data_dir().join("reference_256.png")).unwrap()
}

/// Straightforward Felzenszwalb-Huttenlocher without union-find: components
/// are kept as an explicit label array, sizes are recounted and `Int(c)` is
/// recomputed from the accepted edges on every query.
pub fn oracle_segment(img: &Image, k: f64, min_size: usize, connectivity: u8) -> Vec<u32> {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let px = |i: usize| img.pixel(i / w, i % w).map(|v| v * 255.0);
    let dist = |i: usize, j: usize| {
        let (p, q) = (px(i), px(j));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (yi, xi, yj, xj) = ((i / w) as isize, (i % w) as isize, (j / w) as isize, (j % w) as isize);
            let (dy, dx) = ((yi - yj).abs(), (xi - xj).abs());
            let adjacent = match connectivity {
                4 => dy + dx == 1,
                _ => dy <= 1 && dx <= 1,
            };
            if adjacent {
                edges.push((dist(i, j), i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut comp: Vec<usize> = (0..n).collect();
    let mut accepted: Vec<(f64, usize, usize)> = Vec::new();
    let size = |comp: &[usize], c: usize| comp.iter().filter(|&&x| x == c).count();
    let internal = |comp: &[usize], accepted: &[(f64, usize, usize)], c: usize| {
        accepted
            .iter()
            .filter(|e| comp[e.1] == c)
            .map(|e| e.0)
            .fold(0.0, f64::max)
    };
    let relabel = |comp: &mut Vec<usize>, from: usize, to: usize| {
        comp.iter_mut().filter(|x| **x == from).for_each(|x| *x = to);
    };

    for &(wt, i, j) in &edges {
        let (ci, cj) = (comp[i], comp[j]);
        if ci == cj {
            continue;
        }
        let mint = (internal(&comp, &accepted, ci) + k / size(&comp, ci) as f64)
            .min(internal(&comp, &accepted, cj) + k / size(&comp, cj) as f64);
        if wt <= mint {
            relabel(&mut comp, cj, ci);
            accepted.push((wt, i, j));
        }
    }
    for &(wt, i, j) in &edges {
        let (ci, cj) = (comp[i], comp[j]);
        if ci != cj && (size(&comp, ci) < min_size || size(&comp, cj) < min_size) {
            relabel(&mut comp, cj, ci);
            accepted.push((wt, i, j));
        }
    }

    let mut names: Vec<usize> = Vec::new();
    comp.iter()
        .map(|c| match names.iter().position(|x| x == c) {
            Some(p) => p as u32,
            None => {
                names.push(*c);
                (names.len() - 1) as u32
            }
        })
        .collect()
}

/// Panics unless `map` is a partition of its grid into connected regions
/// labelled `0..C` with accurate sizes.
pub fn assert_connected_partition(map: &RegionMap, connectivity: u8) {
    let (h, w) = (map.height(), map.width());
    let c = map.region_count();
    let labels = map.labels();
    assert_eq!(labels.len(), h * w);
    let mut counts = vec![0usize; c];
    for l in labels {
        assert!((*l as usize) < c, "label {l} out of range");
        counts[*l as usize] += 1;
    }
    assert_eq!(counts, map.region_sizes());
    assert!(counts.iter().all(|n| *n > 0));
    assert_eq!(counts.iter().sum::<usize>(), h * w);

    let mut seen = vec![false; c];
    let mut visited = vec![false; h * w];
    for start in 0..h * w {
        if visited[start] {
            continue;
        }
        let label = labels[start] as usize;
        assert!(!seen[label], "region {label} is disconnected");
        seen[label] = true;
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                if connectivity == 4 && dy != 0 && dx != 0 {
                    continue;
                }
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !visited[j] && labels[j] as usize == label {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
}

/// Between-class centroid distance over mean within-class spread of the
/// expectation vectors of positives and their negatives.
pub fn separation_ratio(positives: &[Image], negatives: &[Image]) -> f64 {
    let stats = |imgs: &[Image]| -> Vec<Vec<f64>> {
        imgs.iter()
            .map(|i| expectation(&extract_features(i).unwrap()).0)
            .collect()
    };
    let (pos, neg) = (stats(positives), stats(negatives));
    let centroid = |v: &[Vec<f64>]| -> Vec<f64> {
        let mut c = vec![0.0; v[0].len()];
        for x in v {
            c.iter_mut().zip(x).for_each(|(a, b)| *a += b / v.len() as f64);
        }
        c
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (cp, cn) = (centroid(&pos), centroid(&neg));
    let spread = |v: &[Vec<f64>], c: &[f64]| v.iter().map(|x| dist(x, c)).sum::<f64>() / v.len() as f64;
    dist(&cp, &cn) / (0.5 * (spread(&pos, &cp) + spread(&neg, &cn)))
}
