fn main() {
    println!("olaf");
}
