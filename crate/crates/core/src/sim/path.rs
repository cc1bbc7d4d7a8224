use std::collections::VecDeque;

pub const UNREACHABLE: u32 = u32::MAX;

/// Multi-source BFS on a square `size`x`size` grid with 4-connectivity.
///
/// Cells are flat indices `row * size + col`; sources that are not passable are ignored.
pub fn bfs(size: usize, passable: impl Fn(usize) -> bool, sources: &[usize]) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; size * size];
    let mut queue = VecDeque::new();
    for &s in sources {
        if s < dist.len() && passable(s) && dist[s] == UNREACHABLE {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / size, i % size);
        let d = dist[i] + 1;
        let mut visit = |j: usize| {
            if dist[j] == UNREACHABLE && passable(j) {
                dist[j] = d;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - size);
        }
        if r + 1 < size {
            visit(i + size);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < size {
            visit(i + 1);
        }
    }
    dist
}

/// Neighbour of `pos` one step closer to the BFS sources, preferring up, down, left, right.
pub fn descend(size: usize, dist: &[u32], pos: usize) -> Option<usize> {
    let d = dist[pos];
    if d == 0 || d == UNREACHABLE {
        return None;
    }
    let (r, c) = (pos / size, pos % size);
    let mut options = Vec::with_capacity(4);
    if r > 0 {
        options.push(pos - size);
    }
    if r + 1 < size {
        options.push(pos + size);
    }
    if c > 0 {
        options.push(pos - 1);
    }
    if c + 1 < size {
        options.push(pos + 1);
    }
    options.into_iter().find(|&n| dist[n] == d - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_grid_distance_is_manhattan() {
        let n = 7;
        let d = bfs(n, |_| true, &[0]);
        for r in 0..n {
            for c in 0..n {
                assert_eq!(d[r * n + c] as usize, r + c);
            }
        }
    }

    #[test]
    fn wall_without_gap_is_unreachable() {
        let n = 5;
        let d = bfs(n, |i| i % n != 2, &[0]);
        assert_eq!(d[4], UNREACHABLE);
        assert_eq!(d[1], 1);
    }

    #[test]
    fn descend_walks_to_source() {
        let n = 6;
        let d = bfs(n, |_| true, &[n * n - 1]);
        let mut pos = 0;
        let mut steps = 0;
        while let Some(p) = descend(n, &d, pos) {
            pos = p;
            steps += 1;
        }
        assert_eq!(pos, n * n - 1);
        assert_eq!(steps, 10);
    }
}
