int lib2_log(const char *msg)
{
	return msg != 0;
}
