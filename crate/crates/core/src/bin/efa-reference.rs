fn main() {
    print!("{}", efa_core::cli::reference());
}
