int unpack_entry(int fd);
unsigned getopt32(char **argv, const char *opts);
int xopen(const char *path, int flags);

int tar_main(int argc, char **argv)
{
	unsigned opt = getopt32(argv, "cxtf:");
	int fd = xopen(argv[argc - 1], 0);
	while (unpack_entry(fd) > 0)
		continue;
	return opt & 1;
}
