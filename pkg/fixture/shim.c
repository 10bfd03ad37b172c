/* libununhide: loader-preload concealment shim, FOR TESTS ONLY.
 *
 * Interposes the libc entry points a process lister leans on and makes
 * exactly one pid and/or one file name vanish from a dynamically linked
 * host. The integration tests load it into `ps` and into the detector's
 * Python front end to prove that the statically linked inspection helper
 * still sees the concealed process.
 *
 * Configuration (read once at load, immutable afterwards):
 *   UNUNHIDE_PID   decimal pid to conceal; values <= 300 are refused, so
 *                  pid 1 and its siblings can never be hidden
 *   UNUNHIDE_HIDE  file name to conceal from directory listings; all-digit
 *                  names <= 300 are refused for the same reason
 *
 * With both variables unset every hook is a straight pass-through. If the
 * genuine symbol cannot be resolved at load the hook reports ENOSYS rather
 * than crash the host. Deliberately out of scope: exec interception,
 * output rewriting, namespace tricks, persistence of any kind.
 */
#define _GNU_SOURCE
#include <dirent.h>
#include <dlfcn.h>
#include <errno.h>
#include <limits.h>
#include <sched.h>
#include <signal.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <time.h>
#include <unistd.h>

#define PID_FLOOR 300

#ifdef __GLIBC__
typedef __priority_which_t prio_which_t;
#else
typedef int prio_which_t;
#endif

/* ---- one-time configuration ------------------------------------------ */

static pid_t hidden_pid;        /* 0 = pid concealment disabled */
static char hidden_dec[16];     /* decimal form of hidden_pid */
static const char *hidden_name; /* NULL = name concealment disabled */

/* ---- genuine implementations, resolved once at load ------------------- */

static struct dirent *(*real_readdir)(DIR *);
static DIR *(*real_opendir)(const char *);
static int (*real_stat)(const char *, struct stat *);
static int (*real_lstat)(const char *, struct stat *);
static int (*real_chdir)(const char *);
static int (*real_getpriority)(prio_which_t, id_t);
static pid_t (*real_getpgid)(pid_t);
static pid_t (*real_getsid)(pid_t);
static int (*real_kill)(pid_t, int);
static int (*real_sched_getaffinity)(pid_t, size_t, cpu_set_t *);
static int (*real_sched_getparam)(pid_t, struct sched_param *);
static int (*real_sched_getscheduler)(pid_t);
static int (*real_sched_rr_get_interval)(pid_t, struct timespec *);
#ifdef __GLIBC__
static struct dirent64 *(*real_readdir64)(DIR *);
#endif

static void resolve(void *slot, const char *name) {
    *(void **)slot = dlsym(RTLD_NEXT, name);
}

/* Returns non-zero when the name is all digits and parses to <= PID_FLOOR:
 * such names are low pids in /proc, which this fixture must never touch. */
static int below_pid_floor(const char *name) {
    if (!*name) return 0;
    long v = 0;
    for (const char *p = name; *p; p++) {
        if (*p < '0' || *p > '9') return 0;
        v = v * 10 + (*p - '0');
        if (v > PID_FLOOR) return 0;
    }
    return 1;
}

__attribute__((constructor)) static void shim_init(void) {
    resolve(&real_readdir, "readdir");
    resolve(&real_opendir, "opendir");
    resolve(&real_stat, "stat");
    resolve(&real_lstat, "lstat");
    resolve(&real_chdir, "chdir");
    resolve(&real_getpriority, "getpriority");
    resolve(&real_getpgid, "getpgid");
    resolve(&real_getsid, "getsid");
    resolve(&real_kill, "kill");
    resolve(&real_sched_getaffinity, "sched_getaffinity");
    resolve(&real_sched_getparam, "sched_getparam");
    resolve(&real_sched_getscheduler, "sched_getscheduler");
    resolve(&real_sched_rr_get_interval, "sched_rr_get_interval");
#ifdef __GLIBC__
    resolve(&real_readdir64, "readdir64");
#endif

    const char *pid_env = getenv("UNUNHIDE_PID");
    if (pid_env && *pid_env) {
        char *end = NULL;
        errno = 0;
        long v = strtol(pid_env, &end, 10);
        /* The floor keeps the fixture away from init and every other
         * system process; malformed values disable it outright. */
        if (errno == 0 && end && *end == '\0' && v > PID_FLOOR && v <= INT_MAX) {
            hidden_pid = (pid_t)v;
            snprintf(hidden_dec, sizeof hidden_dec, "%ld", v);
        }
    }
    const char *name_env = getenv("UNUNHIDE_HIDE");
    if (name_env && *name_env && !below_pid_floor(name_env))
        hidden_name = name_env;
}

/* ---- concealment predicates ------------------------------------------ */

static int concealed_entry(const char *name) {
    if (hidden_pid && strcmp(name, hidden_dec) == 0) return 1;
    if (hidden_name && strcmp(name, hidden_name) == 0) return 1;
    return 0;
}

/* A path is concealed when its final component is a concealed entry or
 * when it lies anywhere under /proc/<hidden pid>. */
static int concealed_path(const char *path) {
    if (!path || (!hidden_pid && !hidden_name)) return 0;
    const char *base = strrchr(path, '/');
    base = base ? base + 1 : path;
    if (concealed_entry(base)) return 1;
    if (hidden_pid) {
        char prefix[32];
        int n = snprintf(prefix, sizeof prefix, "/proc/%s", hidden_dec);
        if (n > 0 && strncmp(path, prefix, (size_t)n) == 0 &&
            (path[n] == '\0' || path[n] == '/'))
            return 1;
    }
    return 0;
}

static int concealed_pid(pid_t pid) {
    return hidden_pid != 0 && pid == hidden_pid;
}

/* ---- directory listing hooks ------------------------------------------ */

struct dirent *readdir(DIR *dirp) {
    if (!real_readdir) { errno = ENOSYS; return NULL; }
    struct dirent *ent;
    while ((ent = real_readdir(dirp)) != NULL && concealed_entry(ent->d_name))
        ;
    return ent;
}

#ifdef __GLIBC__
/* Distinct exported symbol on this libc; hosts built with 64-bit file
 * offsets (ps among them) bind to it instead of readdir. */
struct dirent64 *readdir64(DIR *dirp) {
    if (!real_readdir64) { errno = ENOSYS; return NULL; }
    struct dirent64 *ent;
    while ((ent = real_readdir64(dirp)) != NULL && concealed_entry(ent->d_name))
        ;
    return ent;
}
#endif

DIR *opendir(const char *name) {
    if (!real_opendir) { errno = ENOSYS; return NULL; }
    if (concealed_path(name)) { errno = ENOENT; return NULL; }
    return real_opendir(name);
}

/* ---- path-directed hooks: concealed paths report ENOENT --------------- */

int stat(const char *path, struct stat *buf) {
    if (!real_stat) { errno = ENOSYS; return -1; }
    if (concealed_path(path)) { errno = ENOENT; return -1; }
    return real_stat(path, buf);
}

int lstat(const char *path, struct stat *buf) {
    if (!real_lstat) { errno = ENOSYS; return -1; }
    if (concealed_path(path)) { errno = ENOENT; return -1; }
    return real_lstat(path, buf);
}

int chdir(const char *path) {
    if (!real_chdir) { errno = ENOSYS; return -1; }
    if (concealed_path(path)) { errno = ENOENT; return -1; }
    return real_chdir(path);
}

/* ---- process-directed hooks: the concealed pid reports ESRCH ---------- */

int getpriority(prio_which_t which, id_t who) {
    if (!real_getpriority) { errno = ENOSYS; return -1; }
    if (which == PRIO_PROCESS && concealed_pid((pid_t)who)) {
        errno = ESRCH;
        return -1;
    }
    return real_getpriority(which, who);
}

pid_t getpgid(pid_t pid) {
    if (!real_getpgid) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_getpgid(pid);
}

pid_t getsid(pid_t pid) {
    if (!real_getsid) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_getsid(pid);
}

int kill(pid_t pid, int sig) {
    if (!real_kill) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_kill(pid, sig);
}

int sched_getaffinity(pid_t pid, size_t cpusetsize, cpu_set_t *mask) {
    if (!real_sched_getaffinity) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_sched_getaffinity(pid, cpusetsize, mask);
}

int sched_getparam(pid_t pid, struct sched_param *param) {
    if (!real_sched_getparam) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_sched_getparam(pid, param);
}

int sched_getscheduler(pid_t pid) {
    if (!real_sched_getscheduler) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_sched_getscheduler(pid);
}

int sched_rr_get_interval(pid_t pid, struct timespec *tp) {
    if (!real_sched_rr_get_interval) { errno = ENOSYS; return -1; }
    if (concealed_pid(pid)) { errno = ESRCH; return -1; }
    return real_sched_rr_get_interval(pid, tp);
}
