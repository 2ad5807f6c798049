//! DTW distance between two routes on the 5×5 grid.

use leed::dtw::dtw_distance;
use leed::graph::grid;

fn main() {
    let g = grid(5, 1.0);
    let coords = |path: &[usize]| path.iter().map(|&j| g.coords()[j]).collect::<Vec<_>>();
    let straight = coords(&[0, 1, 2, 3, 4, 9, 14, 19, 24]);
    let stairs = coords(&[0, 1, 6, 7, 12, 13, 18, 19, 24]);
    let detour = coords(&[0, 5, 10, 15, 20, 21, 16, 11, 6, 7, 8, 13, 18, 23, 24]);
    println!("straight vs itself   {:.3}", dtw_distance(&straight, &straight).unwrap());
    println!("straight vs stairs   {:.3}", dtw_distance(&straight, &stairs).unwrap());
    println!("straight vs detour   {:.3}", dtw_distance(&straight, &detour).unwrap());
}
