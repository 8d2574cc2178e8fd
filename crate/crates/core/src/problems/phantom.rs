use ndarray::Array2;

/// Modified Shepp-Logan ellipses: intensity, semi-axis a, semi-axis b,
/// centre x, centre y, rotation in degrees.
pub const MODIFIED_SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

/// `n x n` modified Shepp-Logan phantom, row 0 at the top. Pixel centres
/// span [-1, 1] in both directions.
pub fn shepp_logan_phantom(n: usize) -> Array2<f64> {
    let coord = |k: usize| {
        if n == 1 {
            0.0
        } else {
            (k as f64 - (n as f64 - 1.0) / 2.0) / ((n as f64 - 1.0) / 2.0)
        }
    };
    Array2::from_shape_fn((n, n), |(r, c)| {
        let x = coord(c);
        let y = -coord(r);
        MODIFIED_SHEPP_LOGAN
            .iter()
            .filter(|e| {
                let [_, a, b, x0, y0, deg] = **e;
                let (sin, cos) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * cos + dy * sin;
                let v = dy * cos - dx * sin;
                u * u / (a * a) + v * v / (b * b) <= 1.0
            })
            .map(|e| e[0])
            .sum()
    })
}
