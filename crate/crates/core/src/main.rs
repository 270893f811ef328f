fn main() {
    std::process::exit(particle_dp::cli::main());
}
