use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;

pub fn probe() {
    let u = DMatrix::<Complex64>::identity(4, 4) * Complex64::new(2.0, 0.0);
    let chol = Cholesky::new(u.clone()).expect("chol");
    let rhs = DMatrix::<Complex64>::identity(4, 2);
    let _x = chol.solve(&rhs);
    let eig = u.clone().symmetric_eigen();
    let _vals = eig.eigenvalues;
    let k = u.kronecker(&DMatrix::<Complex64>::identity(2, 2));
    let _inv = k.try_inverse().unwrap();
}
