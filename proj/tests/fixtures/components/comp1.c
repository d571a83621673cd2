int lib1_open(int id);
int lib1_read(int id);
int lib2_log(const char *msg);

int comp1_probe(int id)
{
	if (lib1_open(id) < 0)
		return -1;
	lib1_read(id);
	lib1_read(id + 1);
	lib2_log("comp1 ready");
	return 0;
}
