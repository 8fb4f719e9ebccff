fn main() {
    println!("fp-sde");
}
