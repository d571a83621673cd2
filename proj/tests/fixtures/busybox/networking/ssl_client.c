unsigned getopt32(char **argv, const char *opts);
int tls_handshake(int fd, const char *host);
void *xfopen_for_read(const char *path);

int ssl_client_main(int argc, char **argv)
{
	unsigned opt = getopt32(argv, "s:n:");
	if (argc < 2)
		return 1;
	xfopen_for_read("/etc/ssl/cert.pem");
	return tls_handshake(3, argv[1]) + (int)opt;
}
