fn main() {
    std::process::exit(leasim_cli::main());
}
