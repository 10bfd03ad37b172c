/* probe_core: system-inspection helper for the live backend.
 *
 * Serves a line protocol on stdin/stdout. Every inspection operation enters
 * the kernel through syscall(2) with an explicit syscall number - directory
 * enumeration included - and the release build is fully static: no program
 * interpreter, no dynamic section, nothing a loader-level interposer can
 * reach. The test suite asserts that property on the built binary.
 *
 * Protocol (one request line -> one response; `sweep` adds hit lines):
 *   ppid                      -> ok <parent pid>
 *   pids                      -> ok <pid> <pid> ...
 *   dents <b64path>           -> ok <b64name>:<inode>:<dtype> ...
 *   read <b64path> <max>      -> ok <b64bytes> | err <errno>
 *   rlink <b64path>           -> ok <b64target> | err <errno>
 *   exists <b64path>          -> ok 0|1 | err <errno>
 *   nlink <b64path>           -> ok <count> | err <errno>
 *   magic <b64path>           -> ok <statfs f_type> | err <errno>
 *   pidmax                    -> ok <value> | err <errno>
 *   taskcount                 -> ok <count> | err <errno>
 *   probe <pid> <kind>        -> ok <0-or-errno>
 *   sweep <lo> <hi> <mask>    -> ok <n>\n then n lines: <pid> <r> <r> ...
 *   latency <samples>         -> ok <median ns>
 *   selftrace <pid>           -> ok 0|1
 *   quit                      -> (exits)
 *
 * Probe kinds, by index (must match the Python PROBE_ORDER table):
 *   0 stat  1 chdir  2 opendir  3 getpriority  4 getpgid  5 getsid
 *   6 kill0  7 sched_getaffinity  8 sched_getparam  9 sched_getscheduler
 *   10 sched_rr_get_interval
 */
#define _GNU_SOURCE
#include <errno.h>
#include <fcntl.h>
#include <limits.h>
#include <sched.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/statfs.h>
#include <sys/sysinfo.h>
#include <sys/syscall.h>
#include <sys/types.h>
#include <time.h>
#include <unistd.h>

#define N_KINDS 11
#define MAX_READ (1 << 20)

/* ptrace request values, spelled out to avoid pulling in ptrace(2)'s
 * varargs wrapper declaration. */
#define PT_SEIZE 0x4206
#define PT_INTERRUPT 0x4207
#define PT_DETACH 17
#define PT_EVENT_STOP 128

struct linux_dirent64 {
    uint64_t d_ino;
    int64_t d_off;
    unsigned short d_reclen;
    unsigned char d_type;
    char d_name[];
};

/* ---- base64 ---------------------------------------------------------- */

static const char B64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

static void b64_emit(const unsigned char *data, size_t len) {
    for (size_t i = 0; i < len; i += 3) {
        unsigned v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        putchar(B64[(v >> 18) & 63]);
        putchar(B64[(v >> 12) & 63]);
        putchar(i + 1 < len ? B64[(v >> 6) & 63] : '=');
        putchar(i + 2 < len ? B64[v & 63] : '=');
    }
}

static int b64_val(int c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

/* Decode in place; returns decoded length or -1. */
static ssize_t b64_decode(char *s) {
    size_t out = 0, in = 0, len = strlen(s);
    unsigned v = 0;
    int bits = 0;
    for (; in < len; in++) {
        if (s[in] == '=') break;
        int d = b64_val((unsigned char)s[in]);
        if (d < 0) return -1;
        v = (v << 6) | (unsigned)d;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            s[out++] = (char)((v >> bits) & 0xff);
        }
    }
    s[out] = '\0';
    return (ssize_t)out;
}

/* ---- probes ----------------------------------------------------------- */

static void proc_path(char *buf, size_t n, long pid) {
    snprintf(buf, n, "/proc/%ld", pid);
}

/* Returns 0 if the probe succeeded, else the errno it failed with. */
static int probe_one(long pid, int kind) {
    char path[64];
    long r;
    switch (kind) {
    case 0: { /* stat of /proc/<pid> */
        struct stat st;
        proc_path(path, sizeof path, pid);
        r = syscall(SYS_newfstatat, AT_FDCWD, path, &st, 0);
        break;
    }
    case 1: { /* chdir into /proc/<pid> */
        proc_path(path, sizeof path, pid);
        r = syscall(SYS_chdir, path);
        if (r == 0)
            syscall(SYS_chdir, "/");
        break;
    }
    case 2: { /* open the directory */
        proc_path(path, sizeof path, pid);
        r = syscall(SYS_openat, AT_FDCWD, path, O_RDONLY | O_DIRECTORY | O_CLOEXEC);
        if (r >= 0) {
            syscall(SYS_close, r);
            r = 0;
        }
        break;
    }
    case 3:
        errno = 0;
        r = syscall(SYS_getpriority, PRIO_PROCESS, pid);
        if (r >= 0) r = 0; /* raw return is 20-nice, always >= 1 on success */
        break;
    case 4:
        r = syscall(SYS_getpgid, pid);
        if (r >= 0) r = 0;
        break;
    case 5:
        r = syscall(SYS_getsid, pid);
        if (r >= 0) r = 0;
        break;
    case 6:
        r = syscall(SYS_kill, pid, 0);
        break;
    case 7: {
        unsigned long mask[16];
        r = syscall(SYS_sched_getaffinity, pid, sizeof mask, mask);
        if (r >= 0) r = 0; /* raw return is the mask size */
        break;
    }
    case 8: {
        struct sched_param p;
        r = syscall(SYS_sched_getparam, pid, &p);
        break;
    }
    case 9:
        r = syscall(SYS_sched_getscheduler, pid);
        if (r >= 0) r = 0;
        break;
    case 10: {
        struct timespec ts;
        r = syscall(SYS_sched_rr_get_interval, pid, &ts);
        break;
    }
    default:
        return EINVAL;
    }
    return r < 0 ? errno : 0;
}

/* ---- directory enumeration via raw getdents64 -------------------------- */

static int for_each_dent(const char *path,
                         void (*fn)(const struct linux_dirent64 *, void *),
                         void *arg) {
    long fd = syscall(SYS_openat, AT_FDCWD, path, O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0)
        return errno;
    static char buf[1 << 16];
    for (;;) {
        long n = syscall(SYS_getdents64, fd, buf, sizeof buf);
        if (n < 0) {
            int e = errno;
            syscall(SYS_close, fd);
            return e;
        }
        if (n == 0)
            break;
        for (long off = 0; off < n;) {
            const struct linux_dirent64 *d = (const void *)(buf + off);
            fn(d, arg);
            off += d->d_reclen;
        }
    }
    syscall(SYS_close, fd);
    return 0;
}

static void emit_pid_name(const struct linux_dirent64 *d, void *arg) {
    (void)arg;
    const char *p = d->d_name;
    if (!*p)
        return;
    for (const char *c = p; *c; c++)
        if (*c < '0' || *c > '9')
            return;
    printf(" %s", p);
}

static void emit_dent(const struct linux_dirent64 *d, void *arg) {
    (void)arg;
    putchar(' ');
    b64_emit((const unsigned char *)d->d_name, strlen(d->d_name));
    printf(":%llu:%u", (unsigned long long)d->d_ino, (unsigned)d->d_type);
}

/* ---- small file readers ------------------------------------------------ */

static ssize_t read_whole(const char *path, char *out, size_t cap) {
    long fd = syscall(SYS_openat, AT_FDCWD, path, O_RDONLY | O_CLOEXEC);
    if (fd < 0)
        return -1;
    size_t got = 0;
    for (;;) {
        long n = syscall(SYS_read, fd, out + got, cap - got);
        if (n < 0) {
            int e = errno;
            syscall(SYS_close, fd);
            errno = e;
            return -1;
        }
        if (n == 0)
            break;
        got += (size_t)n;
        if (got == cap)
            break;
    }
    syscall(SYS_close, fd);
    return (ssize_t)got;
}

/* Kernel stat layout differs per arch; rather than hardcode offsets, use the
 * libc struct with the raw syscall (static build: no interposable symbol). */
static int raw_stat(const char *path, struct stat *st) {
    return (int)syscall(SYS_newfstatat, AT_FDCWD, path, st, 0);
}

/* Returns 0 and leaves errno alone if path is a readable directory. */
static int dir_precheck(const char *path) {
    struct stat st;
    if (raw_stat(path, &st) < 0)
        return errno;
    if (!S_ISDIR(st.st_mode))
        return ENOTDIR;
    return 0;
}

/* ---- command handlers --------------------------------------------------- */

static void cmd_sweep(long lo, long hi, unsigned mask) {
    int kinds[N_KINDS], nk = 0;
    for (int k = 0; k < N_KINDS; k++)
        if (mask & (1u << k))
            kinds[nk++] = k;
    /* first pass into memory: hits are rare (live pids only) */
    size_t cap = 4096, n = 0;
    long *hit_pids = malloc(cap * sizeof(long));
    int *hit_res = malloc(cap * (size_t)nk * sizeof(int));
    if (!hit_pids || !hit_res) {
        printf("err %d\n", ENOMEM);
        free(hit_pids);
        free(hit_res);
        return;
    }
    int res[N_KINDS];
    for (long pid = lo; pid <= hi; pid++) {
        int interesting = 0;
        for (int i = 0; i < nk; i++) {
            res[i] = probe_one(pid, kinds[i]);
            if (res[i] != ESRCH && res[i] != ENOENT)
                interesting = 1;
        }
        if (!interesting)
            continue;
        if (n == cap) {
            cap *= 2;
            hit_pids = realloc(hit_pids, cap * sizeof(long));
            hit_res = realloc(hit_res, cap * (size_t)nk * sizeof(int));
            if (!hit_pids || !hit_res) {
                printf("err %d\n", ENOMEM);
                return;
            }
        }
        hit_pids[n] = pid;
        for (int i = 0; i < nk; i++)
            hit_res[n * (size_t)nk + i] = res[i];
        n++;
    }
    printf("ok %zu\n", n);
    for (size_t j = 0; j < n; j++) {
        printf("%ld", hit_pids[j]);
        for (int i = 0; i < nk; i++)
            printf(" %d", hit_res[j * (size_t)nk + i]);
        putchar('\n');
    }
    free(hit_pids);
    free(hit_res);
}

static int cmp_long(const void *a, const void *b) {
    long x = *(const long *)a, y = *(const long *)b;
    return x < y ? -1 : x > y;
}

static void cmd_latency(long samples) {
    if (samples < 1) samples = 1;
    if (samples > 100000) samples = 100000;
    long *lat = malloc((size_t)samples * sizeof(long));
    if (!lat) {
        printf("err %d\n", ENOMEM);
        return;
    }
    struct timespec a, b;
    for (long i = 0; i < samples; i++) {
        syscall(SYS_clock_gettime, CLOCK_MONOTONIC, &a);
        syscall(SYS_getpid);
        syscall(SYS_clock_gettime, CLOCK_MONOTONIC, &b);
        lat[i] = (b.tv_sec - a.tv_sec) * 1000000000L + (b.tv_nsec - a.tv_nsec);
    }
    qsort(lat, (size_t)samples, sizeof(long), cmp_long);
    printf("ok %ld\n", lat[samples / 2]);
    free(lat);
}

int main(void) {
    char *line = NULL;
    size_t linecap = 0;
    static char data[MAX_READ + 1];

    while (getline(&line, &linecap, stdin) >= 0) {
        char cmd[16] = {0};
        char arg1[PATH_MAX * 2] = {0};
        long a2 = 0, a3 = 0;
        int nf = sscanf(line, "%15s %8191s %ld %ld", cmd, arg1, &a2, &a3);
        if (nf < 1)
            continue;

        if (!strcmp(cmd, "quit"))
            break;

        if (!strcmp(cmd, "ppid")) {
            printf("ok %ld\n", (long)syscall(SYS_getppid));
        } else if (!strcmp(cmd, "pids")) {
            int e = dir_precheck("/proc");
            if (e) {
                printf("err %d\n", e);
            } else {
                /* errors past this point truncate, never desync the protocol */
                printf("ok");
                for_each_dent("/proc", emit_pid_name, NULL);
                putchar('\n');
            }
        } else if (!strcmp(cmd, "dents") && nf >= 2 && b64_decode(arg1) >= 0) {
            int e = dir_precheck(arg1);
            if (e) {
                printf("err %d\n", e);
            } else {
                printf("ok");
                for_each_dent(arg1, emit_dent, NULL);
                putchar('\n');
            }
        } else if (!strcmp(cmd, "read") && nf >= 3 && b64_decode(arg1) >= 0) {
            size_t cap = (a2 > 0 && a2 < MAX_READ) ? (size_t)a2 : MAX_READ;
            ssize_t n = read_whole(arg1, data, cap);
            if (n < 0) {
                printf("err %d\n", errno);
            } else {
                printf("ok ");
                b64_emit((unsigned char *)data, (size_t)n);
                putchar('\n');
            }
        } else if (!strcmp(cmd, "rlink") && nf >= 2 && b64_decode(arg1) >= 0) {
            long n = syscall(SYS_readlinkat, AT_FDCWD, arg1, data, sizeof data - 1);
            if (n < 0) {
                printf("err %d\n", errno);
            } else {
                printf("ok ");
                b64_emit((unsigned char *)data, (size_t)n);
                putchar('\n');
            }
        } else if (!strcmp(cmd, "exists") && nf >= 2 && b64_decode(arg1) >= 0) {
            struct stat st;
            if (raw_stat(arg1, &st) == 0)
                printf("ok 1\n");
            else if (errno == ENOENT || errno == ENOTDIR)
                printf("ok 0\n");
            else
                printf("err %d\n", errno);
        } else if (!strcmp(cmd, "nlink") && nf >= 2 && b64_decode(arg1) >= 0) {
            struct stat st;
            if (raw_stat(arg1, &st) == 0)
                printf("ok %lu\n", (unsigned long)st.st_nlink);
            else
                printf("err %d\n", errno);
        } else if (!strcmp(cmd, "ftype") && nf >= 2 && b64_decode(arg1) >= 0) {
            /* file type in d_type encoding (S_IFMT >> 12): resolves
             * DT_UNKNOWN dirents on filesystems without d_type support */
            struct stat st;
            if (syscall(SYS_newfstatat, AT_FDCWD, arg1, &st, AT_SYMLINK_NOFOLLOW) == 0)
                printf("ok %u\n", (unsigned)((st.st_mode >> 12) & 0xF));
            else
                printf("err %d\n", errno);
        } else if (!strcmp(cmd, "magic") && nf >= 2 && b64_decode(arg1) >= 0) {
            struct statfs fs;
            if (syscall(SYS_statfs, arg1, &fs) == 0)
                printf("ok %lu\n", (unsigned long)fs.f_type);
            else
                printf("err %d\n", errno);
        } else if (!strcmp(cmd, "pidmax")) {
            ssize_t n = read_whole("/proc/sys/kernel/pid_max", data, 64);
            if (n <= 0)
                printf("err %d\n", n < 0 ? errno : EIO);
            else {
                data[n] = '\0';
                printf("ok %ld\n", strtol(data, NULL, 10));
            }
        } else if (!strcmp(cmd, "taskcount")) {
            struct sysinfo si;
            if (syscall(SYS_sysinfo, &si) == 0)
                printf("ok %lu\n", (unsigned long)si.procs);
            else
                printf("err %d\n", errno);
        } else if (!strcmp(cmd, "probe") && nf >= 3) {
            printf("ok %d\n", probe_one(strtol(arg1, NULL, 10), (int)a2));
        } else if (!strcmp(cmd, "sweep") && nf >= 4) {
            cmd_sweep(strtol(arg1, NULL, 10), a2, (unsigned)a3);
        } else if (!strcmp(cmd, "latency") && nf >= 2) {
            cmd_latency(strtol(arg1, NULL, 10));
        } else if (!strcmp(cmd, "selftrace") && nf >= 2) {
            long pid = strtol(arg1, NULL, 10);
            if (syscall(SYS_ptrace, PT_SEIZE, pid, 0L, 0L) == 0) {
                /* A SEIZEd tracee keeps running, and DETACH only works on a
                 * stopped one - detaching blind would silently leave us
                 * attached and freeze the tracee at its next signal. Bring
                 * it into a ptrace-stop first, then detach, re-injecting
                 * any real signal the stop swallowed. */
                long sig = 0;
                if (syscall(SYS_ptrace, PT_INTERRUPT, pid, 0L, 0L) == 0) {
                    int status = 0;
                    if (syscall(SYS_wait4, pid, &status, 0x40000000 /*__WALL*/,
                                0L) == pid &&
                        (status & 0xff) == 0x7f /* stopped */ &&
                        (status >> 16) != PT_EVENT_STOP)
                        sig = (status >> 8) & 0xff; /* deliver it on detach */
                }
                syscall(SYS_ptrace, PT_DETACH, pid, 0L, sig);
                printf("ok 1\n");
            } else {
                printf("ok 0\n");
            }
        } else {
            printf("err %d\n", EINVAL);
        }
        fflush(stdout);
    }
    free(line);
    return 0;
}
