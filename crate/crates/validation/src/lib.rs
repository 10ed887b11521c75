//! Holds the `acceptance` test target, which reruns the reference
//! experiments and prints one PASS/FAIL line per criterion.
