use dyadic_web::Session;

#[test]
fn exported_operations_agree_on_frame_counts() {
    let mut s = Session::new(3000, 2).unwrap();
    let n = s.frames();
    assert_eq!(s.centers().len(), 4 * n);
    assert_eq!(s.noses().len(), 4 * n);
    assert_eq!(s.planted().len(), n);
    assert!(s.centers().iter().all(|v| (0.0..=1.0).contains(v)));

    let score = s.segment(4, 1).unwrap();
    assert_eq!(s.decoded().len(), n);
    assert!(s.decoded().iter().all(|&l| l < 4));
    assert!((0.0..=1.0).contains(&score.accuracy));

    let p = s.peth(1, 5.0, 20.0, 3).unwrap();
    assert_eq!(p.time_s.len(), p.mean.len());
    assert_eq!(p.mean.len(), p.sem.len());
    assert!(p.mean.iter().all(|v| *v >= 0.0));
}

#[test]
fn segmentation_replays_from_the_seed() {
    let mut a = Session::new(2000, 5).unwrap();
    let mut b = Session::new(2000, 5).unwrap();
    a.segment(3, 8).unwrap();
    b.segment(3, 8).unwrap();
    assert_eq!(a.decoded(), b.decoded());
}
