#pragma once

namespace cosp
{

/// Execution policy of the data-parallel kernels. `Serial` runs the reference loop; both produce
/// identical results.
enum class Exec
{
    Serial,
    Parallel,
};

/// Upper bound on worker threads for all parallel kernels. Values < 1 leave the OpenMP default.
void set_jobs(int jobs);
int jobs();

} // namespace cosp
